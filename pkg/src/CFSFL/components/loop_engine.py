"""The closed recommendation loop: T-step unrolling through the virtual user
and the two losses the training stages optimize."""
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from CFSFL.components.diffcore import Tensor
from CFSFL.components.model_bundle import ModelBundle
from CFSFL.components.recommender import PolicyOutput, SampleMode, elbo_loss, entropy, normalize_rows
from CFSFL.components.virtual_user import expert_actions
from CFSFL.constants import FUSION, OWNERS, PHI, PSI, THETA
from CFSFL.exception import ContractError

Rows = Sequence[Sequence[int]]


class LoopMode(str, Enum):
    TRAIN = "train"
    EVAL = "eval"


class LoopStep(NamedTuple):
    policy: PolicyOutput
    h: Tensor
    reward_logit: Tensor
    r: Tensor
    v: Tensor


@dataclass
class Trajectory:
    """Per-step recommendations, rewards and feedback of one unrolled batch.

    ``final`` is the recommender output the losses and rankings use: the last
    step's, or the bare recommender's when T is 0.
    """

    v0: np.ndarray
    final: PolicyOutput
    steps: List[LoopStep] = field(default_factory=list)

    @property
    def T(self) -> int:
        return len(self.steps)

    @property
    def actions(self) -> List[Tensor]:
        return [s.policy.a for s in self.steps]

    @property
    def feedback(self) -> List[Tensor]:
        return [s.v for s in self.steps]

    @property
    def rewards(self) -> List[Tensor]:
        return [s.r for s in self.steps]


def _view(bundle: ModelBundle, mode: LoopMode, params: Optional[Mapping[str, Tensor]]) -> Mapping[str, Tensor]:
    if params is not None:
        return params
    # φ is never trained through the loop; in eval nothing is trained at all
    return bundle.params.frozen(OWNERS if mode is LoopMode.EVAL else (PHI,))


def policy_step(x_rows: Rows, x_norm: np.ndarray, v: Tensor, bundle: ModelBundle, params: Mapping[str, Tensor],
                mode=LoopMode.EVAL, rng: Optional[np.random.Generator] = None, use_feedback: bool = True) -> LoopStep:
    """One pass round the loop: recommend, fuse, score, and produce the next feedback."""
    mode = LoopMode(mode)
    train = mode is LoopMode.TRAIN
    policy = bundle.recommender.forward(
        params, x_norm, v, mode=SampleMode.SAMPLE if train else SampleMode.MEAN, dropout_on=train, rng=rng)
    user = bundle.virtual_user
    h = user.fuse(params, x_rows, policy.a)
    logit = user.reward_logit(params, h)
    r = logit.sigmoid()
    if use_feedback:
        v_next = user.generate_feedback(params, h, r).l2_normalize(axis=-1)
    else:
        v_next = Tensor(np.zeros(v.shape))
    return LoopStep(policy=policy, h=h, reward_logit=logit, r=r, v=v_next)


def unroll(x_rows: Rows, bundle: ModelBundle, T: int, mode=LoopMode.EVAL,
           rng: Optional[np.random.Generator] = None, params: Optional[Mapping[str, Tensor]] = None,
           use_feedback: bool = True) -> Trajectory:
    if T < 0:
        raise ContractError("T must be non-negative")
    if len(x_rows) == 0:
        raise ContractError("cannot unroll an empty batch")
    mode = LoopMode(mode)
    params = _view(bundle, mode, params)
    x_norm = normalize_rows(x_rows, bundle.n_items)
    v0 = np.zeros((len(x_rows), bundle.config.feedback_dim))

    if T == 0:
        train = mode is LoopMode.TRAIN
        final = bundle.recommender.forward(
            params, x_norm, Tensor(v0), mode=SampleMode.SAMPLE if train else SampleMode.MEAN,
            dropout_on=train, rng=rng)
        return Trajectory(v0=v0, final=final)

    steps: List[LoopStep] = []
    v = Tensor(v0)
    for _ in range(T):
        step = policy_step(x_rows, x_norm, v, bundle, params, mode=mode, rng=rng, use_feedback=use_feedback)
        steps.append(step)
        v = step.v
    return Trajectory(v0=v0, final=steps[-1].policy, steps=steps)


class CollaborativeLoss(NamedTuple):
    loss: Tensor
    elbo: float
    mean_log_reward: float
    mean_entropy: float
    trajectory: Trajectory


def loss_collaborative(x_rows: Rows, bundle: ModelBundle, T: int, rng: Optional[np.random.Generator] = None,
                       beta: Optional[float] = None, entropy_weight: float = 0.0, mode=LoopMode.TRAIN,
                       params: Optional[Mapping[str, Tensor]] = None, use_feedback: bool = True) -> CollaborativeLoss:
    """Summed ELBO of the last step, minus the mean log reward it earns,
    minus ``entropy_weight`` times its mean entropy.

    Gradients reach θ, ψ and B through every step; φ enters as a constant.
    """
    if len(x_rows) == 0:
        raise ContractError("collaborative loss needs a non-empty batch")
    if T < 1:
        raise ContractError("collaborative loss needs at least one loop step")
    beta = bundle.config.beta_max if beta is None else beta
    trajectory = unroll(x_rows, bundle, T, mode=mode, rng=rng, params=params, use_feedback=use_feedback)
    last = trajectory.steps[-1]
    policy = last.policy

    elbo = elbo_loss(x_rows, policy.logits, policy.mu, policy.logvar, beta)
    log_r = last.reward_logit.log_sigmoid().mean()
    loss = elbo - log_r
    H = entropy(policy.logits).mean()
    if entropy_weight:
        loss = loss - H * entropy_weight
    return CollaborativeLoss(loss=loss, elbo=elbo.item(), mean_log_reward=log_r.item(),
                             mean_entropy=H.item(), trajectory=trajectory)


class AdversarialLoss(NamedTuple):
    objective: Tensor
    mean_reward_expert: float
    mean_reward_policy: float


def loss_adversarial(expert_rows: Rows, policy_rows: Rows, policy_actions, bundle: ModelBundle,
                     params: Optional[Mapping[str, Tensor]] = None) -> AdversarialLoss:
    """Discriminator objective to maximize:
    mean log r(expert) + mean log(1 - r(policy)).

    Expert actions are the observed rows spread uniformly; policy actions are
    detached. Only φ is trainable in the default view.
    """
    if len(expert_rows) == 0 or len(policy_rows) == 0:
        raise ContractError("adversarial loss needs non-empty expert and policy batches")
    params = bundle.params.frozen((THETA, PSI, FUSION)) if params is None else params
    actions = policy_actions.detach() if isinstance(policy_actions, Tensor) else Tensor(policy_actions)
    user = bundle.virtual_user

    expert_logit = user.reward_logit(
        params, user.fuse(params, expert_rows, Tensor(expert_actions(expert_rows, bundle.n_items))))
    policy_logit = user.reward_logit(params, user.fuse(params, policy_rows, actions))

    objective = expert_logit.log_sigmoid().mean() + (-policy_logit).log_sigmoid().mean()
    return AdversarialLoss(
        objective=objective,
        mean_reward_expert=float(expert_logit.sigmoid().data.mean()),
        mean_reward_policy=float(policy_logit.sigmoid().data.mean()),
    )
