from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from CFSFL import logger
from CFSFL.components.diffcore import ParamSet
from CFSFL.components.recommender import Recommender
from CFSFL.components.virtual_user import VirtualUser
from CFSFL.entity.config_entity import RecommenderConfig
from CFSFL.exception import CheckpointError, ShapeError, ContractError
from CFSFL.utils.common import noise_stream, save_checkpoint, load_checkpoint

# noise-stream key reserved for parameter initialization
INIT_STREAM = 0


@dataclass
class ModelBundle:
    """Everything a trained model consists of: the shared parameter set,
    the architecture it was built for, and where training left off."""

    config: RecommenderConfig
    params: ParamSet
    seed: int
    completed_stages: List[int] = field(default_factory=list)
    epochs: Dict[str, int] = field(default_factory=dict)
    run_config: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.recommender = Recommender(self.config)
        self.virtual_user = VirtualUser(self.config)

    @property
    def n_items(self) -> int:
        return self.config.n_items

    @classmethod
    def initialize(cls, config: RecommenderConfig, seed: int,
                   run_config: Optional[Dict[str, Any]] = None) -> "ModelBundle":
        params = ParamSet()
        rng = noise_stream(seed, INIT_STREAM)
        Recommender(config).init_params(params, rng)
        VirtualUser(config).init_params(params, rng)
        logger.info(f"initialized {len(params)} tensors for {config.kind} recommender over {config.n_items} items")
        return cls(config=config, params=params, seed=seed, run_config=dict(run_config or {}))

    def mark_stage(self, stage: int, epochs: int) -> None:
        if stage not in self.completed_stages:
            self.completed_stages.append(stage)
        self.epochs[f"stage{stage}"] = epochs

    def metadata(self) -> Dict[str, Any]:
        return {
            "model": asdict(self.config),
            "seed": self.seed,
            "completed_stages": list(self.completed_stages),
            "epochs": dict(self.epochs),
            "owners": {name: self.params.owner(name) for name in self.params},
            "run_config": self.run_config,
        }

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(path, self.params.arrays(), self.metadata())
        return path

    @classmethod
    def load(cls, path: Path) -> "ModelBundle":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        tensors, meta = load_checkpoint(path)
        try:
            config = RecommenderConfig(**meta["model"])
            bundle = cls.initialize(config, int(meta["seed"]), meta.get("run_config"))
        except (KeyError, TypeError, ContractError) as e:
            raise CheckpointError(f"{path}: checkpoint metadata is incomplete ({e})")

        missing = sorted(set(bundle.params) - set(tensors))
        extra = sorted(set(tensors) - set(bundle.params))
        if missing or extra:
            raise CheckpointError(f"{path}: tensor names do not match the model (missing {missing}, unexpected {extra})")
        try:
            bundle.params.load_arrays(tensors)
        except ShapeError as e:
            raise CheckpointError(f"{path}: {e}")
        bundle.completed_stages = [int(s) for s in meta.get("completed_stages", [])]
        bundle.epochs = {k: int(v) for k, v in meta.get("epochs", {}).items()}
        return bundle

    def check_vocabulary(self, n_items: int) -> None:
        if n_items != self.n_items:
            raise CheckpointError(f"model covers {self.n_items} items but the dataset has {n_items}")
