from dataclasses import dataclass
from pathlib import Path
from typing import Tuple


@dataclass(frozen=True)
class DataIngestionConfig:
    root_dir: Path
    source_URL: str
    local_data_file: Path
    unzip_dir: Path
    ratings_file: Path


@dataclass(frozen=True)
class DataValidationConfig:
    root_dir: Path
    STATUS_FILE: Path
    all_schema: dict
    required_columns: Tuple[str, ...]
    aliases: dict
    max_malformed_fraction: float


@dataclass(frozen=True)
class DataPreparationConfig:
    root_dir: Path
    rating_threshold: float
    min_items_per_user: int
    min_users_per_item: int
    n_val_users: int
    n_test_users: int
    fold_in_fraction: float
    seed: int


@dataclass(frozen=True)
class SyntheticDataConfig:
    n_users: int
    n_items: int
    rank: int
    avg_items_per_user: float
    factor_scale: float
    seed: int


@dataclass(frozen=True)
class RecommenderConfig:
    kind: str
    n_items: int
    feedback_dim: int = 128
    hidden: int = 600
    latent: int = 200
    fusion_dim: int = 64
    reward_hidden: int = 128
    feedback_hidden: int = 128
    input_dropout_rate: float = 0.5
    beta_max: float = 0.2
    beta_anneal_steps: int = 0


@dataclass(frozen=True)
class TrainingConfig:
    T: int = 8
    batch_size: int = 500
    stage1_epochs: int = 150
    stage2_epochs: int = 20
    stage3_epochs: int = 50
    entropy_weight: float = 0.0
    l2_penalty: float = 0.01
    seed: int = 98765
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    use_feedback: bool = True
    validate_every: int = 1
    progress: bool = False


@dataclass(frozen=True)
class ModelTrainerConfig:
    root_dir: Path
    dataset_dir: Path
    checkpoint_dir: Path
    metrics_file: Path
    final_checkpoint: str


@dataclass(frozen=True)
class EvaluationConfig:
    root_dir: Path
    dataset_dir: Path
    metric_file_name: Path
    split: str
    T_list: Tuple[int, ...]
    k_list: Tuple[int, ...]
    validation_k: int
    threads: int
