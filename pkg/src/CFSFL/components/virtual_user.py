"""The virtual user: fuses an observation with a recommendation, scores the
pair with a reward in (0, 1), and turns both into a feedback embedding."""
from typing import Mapping, Sequence

import numpy as np

from CFSFL.components.diffcore import ParamSet, Tensor, concat, forward_layer, init_dense
from CFSFL.components.recommender import indicator_rows
from CFSFL.constants import FUSION, PHI, PSI
from CFSFL.entity.config_entity import RecommenderConfig
from CFSFL.exception import ShapeError

REWARD_LAYERS = ("phi.0", "phi.1", "phi.2", "phi.3")
FEEDBACK_LAYERS = ("psi.0", "psi.1", "psi.2")


def fuse(x_rows: Sequence[Sequence[int]], a, B: Tensor) -> Tensor:
    """h = mean of the observed rows of B plus B^T a, one row per user."""
    a = a if isinstance(a, Tensor) else Tensor(a)
    if a.ndim == 1:
        return fuse([x_rows], a.reshape(1, -1), B).reshape(-1)
    n_items = B.shape[0]
    if a.shape != (len(x_rows), n_items):
        raise ShapeError(f"preferences {a.shape} do not match {len(x_rows)} users over {n_items} items")
    observed = indicator_rows(x_rows, n_items)
    observed /= np.maximum(1.0, observed.sum(axis=1, keepdims=True))
    return Tensor(observed) @ B + a @ B


def expert_actions(x_rows: Sequence[Sequence[int]], n_items: int) -> np.ndarray:
    """Observed rows as uniform distributions over the interacted items."""
    observed = indicator_rows(x_rows, n_items)
    return observed / np.maximum(1.0, observed.sum(axis=1, keepdims=True))


class VirtualUser:
    def __init__(self, config: RecommenderConfig):
        self.config = config

    def init_params(self, params: ParamSet, rng: np.random.Generator) -> None:
        c = self.config
        B, _ = init_dense(c.n_items, c.fusion_dim, "identity", rng)
        params.add("fusion.B", FUSION, B)

        widths = [c.fusion_dim, c.reward_hidden, c.reward_hidden, c.reward_hidden, 1]
        activations = ["relu", "relu", "relu", "sigmoid"]
        for prefix, fan_in, fan_out, act in zip(REWARD_LAYERS, widths, widths[1:], activations):
            W, b = init_dense(fan_in, fan_out, act, rng)
            params.add(f"{prefix}.W", PHI, W)
            params.add(f"{prefix}.b", PHI, b)

        widths = [c.fusion_dim + 1, c.feedback_hidden, c.feedback_hidden, c.feedback_dim]
        activations = ["relu", "relu", "identity"]
        for prefix, fan_in, fan_out, act in zip(FEEDBACK_LAYERS, widths, widths[1:], activations):
            W, b = init_dense(fan_in, fan_out, act, rng)
            params.add(f"{prefix}.W", PSI, W)
            params.add(f"{prefix}.b", PSI, b)

    def fuse(self, params: Mapping[str, Tensor], x_rows, a) -> Tensor:
        return fuse(x_rows, a, params["fusion.B"])

    def reward_logit(self, params: Mapping[str, Tensor], h: Tensor) -> Tensor:
        """Pre-sigmoid reward g(h), shape (batch,)."""
        if h.shape[-1] != self.config.fusion_dim:
            raise ShapeError(f"fused input must have width {self.config.fusion_dim}, got {h.shape}")
        out = h
        for prefix in REWARD_LAYERS[:-1]:
            out = forward_layer(out, params[f"{prefix}.W"], params[f"{prefix}.b"], "relu")
        last = REWARD_LAYERS[-1]
        out = forward_layer(out, params[f"{last}.W"], params[f"{last}.b"], "identity")
        return out.reshape(-1) if h.ndim == 2 else out.reshape(())

    def estimate_reward(self, params: Mapping[str, Tensor], h: Tensor) -> Tensor:
        return self.reward_logit(params, h).sigmoid()

    def generate_feedback(self, params: Mapping[str, Tensor], h: Tensor, r) -> Tensor:
        """Feedback embedding from [h; r]; ``r`` enters as a constant."""
        r = r.data if isinstance(r, Tensor) else np.asarray(r, dtype=np.float64)
        if h.ndim == 1:
            return self.generate_feedback(params, h.reshape(1, -1), np.reshape(r, (1,))).reshape(-1)
        if r.shape != (h.shape[0],):
            raise ShapeError(f"rewards {r.shape} do not match {h.shape[0]} fused rows")
        out = concat([h, Tensor(r.reshape(-1, 1))], axis=1)
        for prefix in FEEDBACK_LAYERS[:-1]:
            out = forward_layer(out, params[f"{prefix}.W"], params[f"{prefix}.b"], "relu")
        last = FEEDBACK_LAYERS[-1]
        return forward_layer(out, params[f"{last}.W"], params[f"{last}.b"], "identity")
