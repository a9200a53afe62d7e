import logging
from dataclasses import replace
from pathlib import Path

import numpy as np
from pytest import fixture

from CFSFL.components.data_transformation import generate_synthetic, split_strong_generalization
from CFSFL.components.model_bundle import ModelBundle
from CFSFL.entity.config_entity import RecommenderConfig, TrainingConfig

_log = logging.getLogger(__name__)

REPO_ROOT = Path(__file__).resolve().parents[1]

TOY_MODEL = RecommenderConfig(kind="vae", n_items=10, feedback_dim=3, hidden=6, latent=4, fusion_dim=4,
                              reward_hidden=5, feedback_hidden=5, input_dropout_rate=0.5, beta_max=0.2)
TOY_TRAINING = TrainingConfig(T=2, batch_size=16, stage1_epochs=2, stage2_epochs=2, stage3_epochs=2,
                              l2_penalty=0.01, seed=7, lr=1e-2)


@fixture
def model_config():
    "Factory for small recommender configs."
    def make(**changes) -> RecommenderConfig:
        return replace(TOY_MODEL, **changes)
    return make


@fixture
def training_config():
    "Factory for small training configs."
    def make(**changes) -> TrainingConfig:
        return replace(TOY_TRAINING, **changes)
    return make


@fixture
def toy_bundle():
    return ModelBundle.initialize(TOY_MODEL, seed=11)


@fixture
def rng():
    return np.random.default_rng(20240601)


@fixture(scope="module")
def tiny_split():
    "60 synthetic users over 12 items, 8 validation and 8 test users."
    matrix = generate_synthetic(60, 12, 2, 4.0, seed=5)
    split = split_strong_generalization(matrix, 8, 8, 0.8, seed=5)
    _log.info("tiny split: %d train users", split.train.n_users)
    return split


@fixture
def repo_cwd(monkeypatch):
    "Runs the test from the repository root so the YAML defaults resolve."
    monkeypatch.chdir(REPO_ROOT)
    return REPO_ROOT
