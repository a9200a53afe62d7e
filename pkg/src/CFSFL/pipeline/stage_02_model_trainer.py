from pathlib import Path
from typing import Optional

import pandas as pd

from CFSFL.config.configuration import ConfigurationManager
from CFSFL.components.data_transformation import load_split_set
from CFSFL.components.model_bundle import ModelBundle
from CFSFL.components.model_evaluation import evaluate_model
from CFSFL.components.model_trainer import ModelTrainer
from CFSFL.constants import CSV_FLOAT_FORMAT, TRAIN_METRICS_COLUMNS
from CFSFL.entity.artifact_entity import LossReport, TrainingResult
from CFSFL import logger



STAGE_NAME = "Model Trainer stage"

class ModelTrainerTrainingPipeline:
    def __init__(self, config: Optional[ConfigurationManager] = None):
        self.config = config

    def main(self, dataset_dir: Optional[Path] = None, resume: Optional[Path] = None) -> TrainingResult:
        config = self.config or ConfigurationManager()
        model_trainer_config = config.get_model_trainer_config()
        training_config = config.get_training_config()
        evaluation_config = config.get_evaluation_config()

        split = load_split_set(Path(dataset_dir or model_trainer_config.dataset_dir))
        if resume is not None:
            bundle = ModelBundle.load(Path(resume))
            bundle.check_vocabulary(split.n_items)
            bundle.run_config = config.run_config()
            logger.info(f"resuming from {resume} (completed stages: {bundle.completed_stages})")
        else:
            bundle = ModelBundle.initialize(config.get_recommender_config(split.n_items), training_config.seed,
                                            config.run_config())

        metrics_file = model_trainer_config.metrics_file
        metrics_file.parent.mkdir(parents=True, exist_ok=True)
        if resume is None or not metrics_file.exists():
            pd.DataFrame(columns=TRAIN_METRICS_COLUMNS).to_csv(metrics_file, index=False, lineterminator="\n")

        k = evaluation_config.validation_k

        def on_epoch_end(report: LossReport, bundle: ModelBundle):
            rows = [(report.stage, report.epoch, name, value) for name, value in report.metrics().items()]
            every = training_config.validate_every
            if report.stage != 2 and split.validation and every > 0 and report.epoch % every == 0:
                T = training_config.T if report.stage == 3 else 0
                ndcg = [r for r in evaluate_model(bundle, split.validation, T, [k], evaluation_config.threads)
                        if r.metric == "ndcg"][0]
                logger.info(f"stage {report.stage} epoch {report.epoch}: validation NDCG@{k} = {ndcg.value:.5f}")
                rows.append((report.stage, report.epoch, f"val_ndcg@{k}", ndcg.value))
            pd.DataFrame(rows, columns=TRAIN_METRICS_COLUMNS).to_csv(
                metrics_file, mode="a", header=False, index=False, float_format=CSV_FLOAT_FORMAT,
                lineterminator="\n")

        def on_stage_end(stage: int, bundle: ModelBundle):
            bundle.save(model_trainer_config.checkpoint_dir / f"stage{stage}.ckpt")

        trainer = ModelTrainer(training_config, split)
        result = trainer.train(bundle=bundle, on_epoch_end=on_epoch_end, on_stage_end=on_stage_end)
        result.bundle.save(model_trainer_config.checkpoint_dir / model_trainer_config.final_checkpoint)
        return result




if __name__ == '__main__':
    try:
        logger.info(f">>>>>> stage {STAGE_NAME} started <<<<<<")
        obj = ModelTrainerTrainingPipeline()
        obj.main()
        logger.info(f">>>>>> stage {STAGE_NAME} completed <<<<<<\n\nx==========x")
    except Exception as e:
        logger.exception(e)
        raise e
