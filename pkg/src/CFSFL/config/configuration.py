import json
import os
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

from box import ConfigBox

from CFSFL import logger
from CFSFL.constants import *
from CFSFL.exception import ConfigError
from CFSFL.utils.common import read_yaml, create_directories, flatten_dict, unflatten_dict
from CFSFL.entity.config_entity import (DataIngestionConfig, DataValidationConfig, DataPreparationConfig,
                                        SyntheticDataConfig, RecommenderConfig, TrainingConfig,
                                        ModelTrainerConfig, EvaluationConfig)


def _coerce(key: str, value: Any, default: Any) -> Any:
    """Casts an override to the type of its default."""
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                if value.lower() not in ("true", "false", "1", "0"):
                    raise ValueError(value)
                return value.lower() in ("true", "1")
            return bool(value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, list):
            if isinstance(value, str):
                value = [v for v in value.replace(",", " ").split() if v]
            if not isinstance(value, (list, tuple)):
                value = [value]
            kind = type(default[0]) if default else int
            return [kind(v) for v in value]
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r}: cannot interpret {value!r} as {type(default).__name__}")


def parse_override(text: str) -> tuple:
    """``key=value`` with the value parsed as JSON when possible."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


class ConfigurationManager:
    def __init__(
        self,
        config_filepath = CONFIG_FILE_PATH,
        params_filepath = PARAMS_FILE_PATH,
        schema_filepath = SCHEMA_FILE_PATH,
        run_config_path: Optional[Path] = None,
        overrides: Optional[Iterable[str]] = None):

        defaults = flatten_dict(read_yaml(Path(config_filepath)).to_dict())
        defaults.update(flatten_dict(read_yaml(Path(params_filepath)).to_dict()))
        self.schema = read_yaml(Path(schema_filepath))

        updates: Dict[str, Any] = {}
        if run_config_path is not None:
            with open(run_config_path) as f:
                content = json.load(f)
            if not isinstance(content, dict):
                raise ConfigError(f"{run_config_path}: run config must be a JSON object of dotted keys")
            updates.update(content)
            logger.info(f"run config loaded from: {run_config_path}")
        for text in overrides or ():
            key, value = parse_override(text)
            updates[key] = value

        unknown = sorted(set(updates) - set(defaults))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

        self.values = dict(defaults)
        for key, value in updates.items():
            self.values[key] = _coerce(key, value, defaults[key])

        tree = ConfigBox(unflatten_dict(self.values))
        self.config = tree
        self.params = tree

        create_directories([self.config.artifacts_root])

    def run_config(self) -> Dict[str, Any]:
        """Flat snapshot of every resolved key (recorded in checkpoints)."""
        return dict(sorted(self.values.items()))

    def threads(self) -> int:
        threads = int(self.params.runtime.threads)
        cap = os.environ.get(THREADS_ENV)
        if cap:
            threads = min(threads, max(1, int(cap))) if threads > 0 else max(1, int(cap))
        return max(1, threads)

    def get_data_ingestion_config(self) -> DataIngestionConfig:
        config = self.config.data_ingestion

        create_directories([config.root_dir])

        data_ingestion_config = DataIngestionConfig(
            root_dir=Path(config.root_dir),
            source_URL=config.source_URL,
            local_data_file=Path(config.local_data_file),
            unzip_dir=Path(config.unzip_dir),
            ratings_file=Path(config.ratings_file),
        )

        return data_ingestion_config

    def get_data_validation_config(self) -> DataValidationConfig:
        config = self.config.data_validation
        schema = self.schema

        create_directories([config.root_dir])

        data_validation_config = DataValidationConfig(
            root_dir=Path(config.root_dir),
            STATUS_FILE=Path(config.STATUS_FILE),
            all_schema=dict(schema.COLUMNS),
            required_columns=tuple(schema.REQUIRED_COLUMNS),
            aliases=dict(schema.get("ALIASES", {})),
            max_malformed_fraction=float(self.params.data.max_malformed_fraction),
        )

        return data_validation_config

    def get_data_preparation_config(self) -> DataPreparationConfig:
        config = self.config.data_preparation
        params = self.params.data

        create_directories([config.root_dir])

        data_preparation_config = DataPreparationConfig(
            root_dir=Path(config.root_dir),
            rating_threshold=float(params.rating_threshold),
            min_items_per_user=int(params.min_items_per_user),
            min_users_per_item=int(params.min_users_per_item),
            n_val_users=int(params.n_val_users),
            n_test_users=int(params.n_test_users),
            fold_in_fraction=float(params.fold_in_fraction),
            seed=int(params.seed),
        )

        return data_preparation_config

    def get_synthetic_data_config(self) -> SyntheticDataConfig:
        params = self.params.synthetic

        return SyntheticDataConfig(
            n_users=int(params.n_users),
            n_items=int(params.n_items),
            rank=int(params.rank),
            avg_items_per_user=float(params.avg_items_per_user),
            factor_scale=float(params.factor_scale),
            seed=int(params.seed),
        )

    def get_recommender_config(self, n_items: int) -> RecommenderConfig:
        params = self.params.model

        return RecommenderConfig(
            kind=str(params.kind),
            n_items=int(n_items),
            feedback_dim=int(params.feedback_dim),
            hidden=int(params.hidden),
            latent=int(params.latent),
            fusion_dim=int(params.fusion_dim),
            reward_hidden=int(params.reward_hidden),
            feedback_hidden=int(params.feedback_hidden),
            input_dropout_rate=float(params.input_dropout_rate),
            beta_max=float(params.beta_max),
            beta_anneal_steps=int(params.beta_anneal_steps),
        )

    def get_training_config(self) -> TrainingConfig:
        params = self.params.train

        return TrainingConfig(
            T=int(params.T),
            batch_size=int(params.batch_size),
            stage1_epochs=int(params.stage1_epochs),
            stage2_epochs=int(params.stage2_epochs),
            stage3_epochs=int(params.stage3_epochs),
            entropy_weight=float(params.entropy_weight),
            l2_penalty=float(params.l2_penalty),
            seed=int(params.seed),
            lr=float(params.lr),
            beta1=float(params.beta1),
            beta2=float(params.beta2),
            epsilon=float(params.epsilon),
            use_feedback=bool(params.use_feedback),
            validate_every=int(params.validate_every),
            progress=bool(self.params.runtime.progress),
        )

    def get_model_trainer_config(self) -> ModelTrainerConfig:
        config = self.config.model_trainer

        create_directories([config.root_dir, config.checkpoint_dir])

        model_trainer_config = ModelTrainerConfig(
            root_dir=Path(config.root_dir),
            dataset_dir=Path(config.dataset_dir),
            checkpoint_dir=Path(config.checkpoint_dir),
            metrics_file=Path(config.metrics_file),
            final_checkpoint=str(config.final_checkpoint),
        )
        return model_trainer_config

    def get_evaluation_config(self) -> EvaluationConfig:
        config = self.config.model_evaluation
        params = self.params.eval

        create_directories([config.root_dir])

        evaluation_config = EvaluationConfig(
            root_dir=Path(config.root_dir),
            dataset_dir=Path(config.dataset_dir),
            metric_file_name=Path(config.metric_file_name),
            split=str(params.split),
            T_list=tuple(int(t) for t in params.T_list),
            k_list=tuple(int(k) for k in params.k_list),
            validation_k=int(params.validation_k),
            threads=self.threads(),
        )

        return evaluation_config
