from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import pandas as pd

from CFSFL.config.configuration import ConfigurationManager
from CFSFL.components.data_transformation import load_split_set
from CFSFL.components.model_bundle import ModelBundle
from CFSFL.components.model_evaluation import ModelEvaluation
from CFSFL import logger



STAGE_NAME = "Model evaluation stage"

class ModelEvaluationTrainingPipeline:
    def __init__(self, config: Optional[ConfigurationManager] = None):
        self.config = config

    def main(self, checkpoint: Optional[Path] = None, dataset_dir: Optional[Path] = None,
             T_list: Optional[Sequence[int]] = None, k_list: Optional[Sequence[int]] = None,
             split: Optional[str] = None, out: Optional[Path] = None) -> pd.DataFrame:
        config = self.config or ConfigurationManager()
        model_evaluation_config = config.get_evaluation_config()
        if split is not None:
            model_evaluation_config = replace(model_evaluation_config, split=split)
        if checkpoint is None:
            model_trainer_config = config.get_model_trainer_config()
            checkpoint = model_trainer_config.checkpoint_dir / model_trainer_config.final_checkpoint

        bundle = ModelBundle.load(Path(checkpoint))
        data = load_split_set(Path(dataset_dir or model_evaluation_config.dataset_dir))
        model_evaluation = ModelEvaluation(config=model_evaluation_config)
        frame = model_evaluation.evaluate(bundle, data, T_list=T_list, k_list=k_list)
        model_evaluation.save_metrics(frame, out)
        return frame




if __name__ == '__main__':
    try:
        logger.info(f">>>>>> stage {STAGE_NAME} started <<<<<<")
        obj = ModelEvaluationTrainingPipeline()
        obj.main()
        logger.info(f">>>>>> stage {STAGE_NAME} completed <<<<<<\n\nx==========x")
    except Exception as e:
        logger.exception(e)
        raise e
