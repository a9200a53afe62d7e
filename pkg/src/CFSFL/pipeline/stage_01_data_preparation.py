from dataclasses import replace
from pathlib import Path
from typing import Dict, Optional

from CFSFL.config.configuration import ConfigurationManager
from CFSFL.components.data_ingestion import DataIngestion, load_interactions
from CFSFL.components.data_transformation import DataTransformation
from CFSFL.components.data_validation import DataValidation
from CFSFL import logger



STAGE_NAME = "Data Preparation stage"

class DataPreparationTrainingPipeline:
    def __init__(self, config: Optional[ConfigurationManager] = None):
        self.config = config

    def main(self, input_csv: Optional[Path] = None, out_dir: Optional[Path] = None,
             synthetic: bool = False, download: bool = False) -> Dict[str, float]:
        config = self.config or ConfigurationManager()
        data_preparation_config = config.get_data_preparation_config()
        if out_dir is not None:
            data_preparation_config = replace(data_preparation_config, root_dir=Path(out_dir))
        data_transformation = DataTransformation(config=data_preparation_config)

        if synthetic:
            split = data_transformation.synthesize(config.get_synthetic_data_config())
        else:
            if download:
                data_ingestion_config = config.get_data_ingestion_config()
                data_ingestion = DataIngestion(config=data_ingestion_config)
                data_ingestion.download_file()
                ratings_file = data_ingestion.extract_zip_file()
                input_csv = input_csv or ratings_file
            if input_csv is None:
                raise FileNotFoundError("no interaction file given (pass an input CSV, --synthetic or --download)")
            validation = DataValidation(config=config.get_data_validation_config())
            split = data_transformation.transform(load_interactions(Path(input_csv), validation=validation))

        summary = data_transformation.save(split)
        for key, value in summary.items():
            logger.info(f"{key}: {value}")
        return summary



if __name__ == '__main__':
    try:
        logger.info(f">>>>>> stage {STAGE_NAME} started <<<<<<")
        obj = DataPreparationTrainingPipeline()
        obj.main(synthetic=True)
        logger.info(f">>>>>> stage {STAGE_NAME} completed <<<<<<\n\nx==========x")
    except Exception as e:
        logger.exception(e)
        raise e
