from pathlib import Path
from typing import Optional

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd

from CFSFL.constants import EVAL_METRICS_COLUMNS, TRAIN_METRICS_COLUMNS
from CFSFL.exception import FormatError
from CFSFL import logger



STAGE_NAME = "Report stage"

def summarize_training(frame: pd.DataFrame) -> pd.DataFrame:
    """First and last value of every metric within each stage."""
    grouped = frame.sort_values(["stage", "epoch"], kind="stable").groupby(["stage", "metric"])["value"]
    table = pd.DataFrame({"epochs": grouped.size(), "first": grouped.first(), "last": grouped.last()})
    table["change"] = table["last"] - table["first"]
    return table


def summarize_evaluation(frame: pd.DataFrame) -> pd.DataFrame:
    """metric@k rows against T columns."""
    table = frame.pivot_table(index=["split", "metric", "k"], columns="T", values="value", aggfunc="first")
    table.columns = [f"T={t}" for t in table.columns]
    return table


class ReportPipeline:
    def __init__(self):
        pass

    @staticmethod
    def read(metrics_csv: Path) -> pd.DataFrame:
        metrics_csv = Path(metrics_csv)
        if not metrics_csv.is_file():
            raise FileNotFoundError(f"metrics file not found: {metrics_csv}")
        frame = pd.read_csv(metrics_csv)
        if list(frame.columns) not in (TRAIN_METRICS_COLUMNS, EVAL_METRICS_COLUMNS):
            raise FormatError(f"{metrics_csv}: unrecognized metrics columns {list(frame.columns)}")
        return frame

    def plot(self, frame: pd.DataFrame, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fig, ax = plt.subplots(figsize=(8, 5))
        if list(frame.columns) == TRAIN_METRICS_COLUMNS:
            for (stage, metric), part in frame.groupby(["stage", "metric"]):
                ax.plot(part["epoch"], part["value"], marker=".", label=f"stage {stage} {metric}")
            ax.set_xlabel("epoch")
        else:
            for (metric, k), part in frame.groupby(["metric", "k"]):
                part = part.sort_values("T")
                ax.plot(part["T"], part["value"], marker="o", label=f"{metric}@{k}")
            ax.set_xlabel("T (loop steps)")
        ax.set_ylabel("value")
        ax.legend(fontsize="small")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
        logger.info(f"plot saved at: {path}")
        return path

    def main(self, metrics_csv: Path, plot: Optional[Path] = None) -> str:
        frame = self.read(metrics_csv)
        if list(frame.columns) == TRAIN_METRICS_COLUMNS:
            table = summarize_training(frame)
        else:
            table = summarize_evaluation(frame)
        if plot is not None:
            self.plot(frame, plot)
        return table.to_string(float_format=lambda v: f"{v:.5f}")




if __name__ == '__main__':
    try:
        logger.info(f">>>>>> stage {STAGE_NAME} started <<<<<<")
        obj = ReportPipeline()
        print(obj.main(Path("artifacts/model_evaluation/metrics.csv")))
        logger.info(f">>>>>> stage {STAGE_NAME} completed <<<<<<\n\nx==========x")
    except Exception as e:
        logger.exception(e)
        raise e
