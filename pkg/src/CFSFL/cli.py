"""Command-line front end: ``cfsfl prep|train|eval|report|recommend``."""
import argparse
import sys
from pathlib import Path
from typing import List, Optional

from CFSFL import logger
from CFSFL.config.configuration import ConfigurationManager
from CFSFL.constants import EXIT_DATA, EXIT_IO, EXIT_NUMERIC, EXIT_OK
from CFSFL.exception import (CheckpointError, ConfigError, ContractError, DataError, NumericError,
                             ParameterError, ShapeError)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfsfl", description="Collaborative filtering with a synthetic feedback loop")
    parser.add_argument("--config", type=Path, default=None, help="JSON run config of flat dotted keys")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key, e.g. --set train.T=4 (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    prep = sub.add_parser("prep", help="preprocess interactions and write a dataset directory")
    prep.add_argument("input", nargs="?", type=Path, default=None, help="interaction CSV (userId,itemId,rating[,timestamp])")
    prep.add_argument("--out", type=Path, default=None, help="dataset directory to write")
    source = prep.add_mutually_exclusive_group()
    source.add_argument("--synthetic", action="store_true", help="generate a synthetic low-rank dataset instead")
    source.add_argument("--download", action="store_true", help="download the configured MovieLens archive first")

    train = sub.add_parser("train", help="run the three training stages")
    train.add_argument("--dataset", type=Path, default=None)
    train.add_argument("--resume", type=Path, default=None, help="checkpoint to continue from")

    evaluate = sub.add_parser("eval", help="Recall@k and NDCG@k on held-out users")
    evaluate.add_argument("--checkpoint", type=Path, default=None)
    evaluate.add_argument("--dataset", type=Path, default=None)
    evaluate.add_argument("--T", dest="T_list", type=int, nargs="+", default=None, help="loop steps (sweep)")
    evaluate.add_argument("--k", dest="k_list", type=int, nargs="+", default=None)
    evaluate.add_argument("--split", choices=("validation", "test"), default=None)
    evaluate.add_argument("--out", type=Path, default=None, help="metrics CSV to write")

    report = sub.add_parser("report", help="summarize a train or eval metrics CSV")
    report.add_argument("metrics_csv", type=Path)
    report.add_argument("--plot", type=Path, default=None, help="write a PNG plot here")

    recommend = sub.add_parser("recommend", help="top-k items for an ad-hoc history")
    recommend.add_argument("--checkpoint", type=Path, required=True)
    recommend.add_argument("--dataset", type=Path, required=True)
    recommend.add_argument("--items", nargs="+", required=True, help="item ids the user interacted with")
    recommend.add_argument("--k", type=int, default=20)
    recommend.add_argument("--T", type=int, default=0)
    return parser


def cmd_prep(args, config: ConfigurationManager) -> None:
    from CFSFL.pipeline.stage_01_data_preparation import DataPreparationTrainingPipeline

    summary = DataPreparationTrainingPipeline(config).main(
        input_csv=args.input, out_dir=args.out, synthetic=args.synthetic, download=args.download)
    width = max(len(k) for k in summary)
    for key, value in summary.items():
        shown = f"{value:.4f}" if isinstance(value, float) else str(value)
        print(f"{key:<{width}}  {shown}")


def cmd_train(args, config: ConfigurationManager) -> None:
    from CFSFL.pipeline.stage_02_model_trainer import ModelTrainerTrainingPipeline

    result = ModelTrainerTrainingPipeline(config).main(dataset_dir=args.dataset, resume=args.resume)
    print(f"trained stages {sorted(result.bundle.completed_stages)} ({len(result.reports)} epoch reports)")


def cmd_eval(args, config: ConfigurationManager) -> None:
    from CFSFL.pipeline.stage_03_model_evaluation import ModelEvaluationTrainingPipeline
    from CFSFL.pipeline.stage_04_report import summarize_evaluation

    frame = ModelEvaluationTrainingPipeline(config).main(
        checkpoint=args.checkpoint, dataset_dir=args.dataset, T_list=args.T_list, k_list=args.k_list,
        split=args.split, out=args.out)
    print(summarize_evaluation(frame).to_string(float_format=lambda v: f"{v:.5f}"))


def cmd_report(args, config: ConfigurationManager) -> None:
    from CFSFL.pipeline.stage_04_report import ReportPipeline

    print(ReportPipeline().main(args.metrics_csv, plot=args.plot))


def cmd_recommend(args, config: ConfigurationManager) -> None:
    from CFSFL.pipeline.prediction import PredictionPipeline

    for item in PredictionPipeline(args.checkpoint, args.dataset).predict(args.items, k=args.k, T=args.T):
        print(item)


COMMANDS = {
    "prep": cmd_prep,
    "train": cmd_train,
    "eval": cmd_eval,
    "report": cmd_report,
    "recommend": cmd_recommend,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = ConfigurationManager(run_config_path=args.config, overrides=args.overrides)
        logger.info(f">>>>>> command {args.command} started <<<<<<")
        COMMANDS[args.command](args, config)
        logger.info(f">>>>>> command {args.command} completed <<<<<<")
        return EXIT_OK
    except NumericError as e:
        logger.error(f"numeric failure: {e}")
        return EXIT_NUMERIC
    except (DataError, ConfigError, CheckpointError, ParameterError, ContractError, ShapeError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_DATA
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
