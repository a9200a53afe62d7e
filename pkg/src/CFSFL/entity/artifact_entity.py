from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple


@dataclass(frozen=True)
class RawInteraction:
    user_id: str
    item_id: str
    rating: float
    timestamp: Optional[int] = None


@dataclass(frozen=True)
class InteractionMatrix:
    """Binary user-item matrix stored as one ascending item tuple per user."""

    n_users: int
    n_items: int
    rows: Tuple[Tuple[int, ...], ...]
    user_ids: Tuple[str, ...] = ()
    item_ids: Tuple[str, ...] = ()

    @property
    def n_interactions(self) -> int:
        return sum(len(r) for r in self.rows)


@dataclass(frozen=True)
class HeldOutUser:
    user_id: str
    fold_in: Tuple[int, ...]
    held_out: Tuple[int, ...]


@dataclass(frozen=True)
class SplitSet:
    train: InteractionMatrix
    validation: Tuple[HeldOutUser, ...]
    test: Tuple[HeldOutUser, ...]

    @property
    def n_items(self) -> int:
        return self.train.n_items


@dataclass(frozen=True)
class LossReport:
    epoch: int
    stage: int
    loss_rec: float = 0.0
    loss_collab: float = 0.0
    loss_adv: float = 0.0
    mean_reward_expert: float = 0.0
    mean_reward_policy: float = 0.0

    def metrics(self) -> Dict[str, float]:
        return {
            "loss_rec": self.loss_rec,
            "loss_collab": self.loss_collab,
            "loss_adv": self.loss_adv,
            "mean_reward_expert": self.mean_reward_expert,
            "mean_reward_policy": self.mean_reward_policy,
        }


@dataclass(frozen=True)
class MetricResult:
    metric: str
    k: int
    value: float
    n_users_evaluated: int
    T: int = 0
    n_users_skipped: int = 0


@dataclass
class TrainingResult:
    bundle: "object"
    reports: List[LossReport] = field(default_factory=list)
