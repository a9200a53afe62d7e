"""The recommender policy: a multinomial VAE (or its DAE variant) mapping the
user state [x; v] to a preference distribution over items."""
from enum import Enum
from typing import List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from CFSFL.components.diffcore import Tensor, concat, forward_layer, init_dense, ParamSet
from CFSFL.constants import THETA
from CFSFL.entity.config_entity import RecommenderConfig
from CFSFL.exception import ContractError, ShapeError

Rows = Sequence[Sequence[int]]


class RecommenderKind(str, Enum):
    VAE = "vae"
    DAE = "dae"


class SampleMode(str, Enum):
    SAMPLE = "sample"
    MEAN = "mean"


class PolicyOutput(NamedTuple):
    logits: Tensor
    a: Tensor
    mu: Tensor
    logvar: Optional[Tensor]


class TopK(NamedTuple):
    items: list
    short: bool


def indicator_rows(rows: Rows, n_items: int) -> np.ndarray:
    """Dense 0/1 matrix with one row per item index set."""
    out = np.zeros((len(rows), n_items))
    for i, row in enumerate(rows):
        row = np.asarray(row, dtype=np.int64)
        if row.size and (row.min() < 0 or row.max() >= n_items):
            raise ShapeError(f"item index out of range for {n_items} items")
        out[i, row] = 1.0
    return out


def normalize_rows(rows: Rows, n_items: int) -> np.ndarray:
    """Unit L2-normalized observations; empty rows stay zero."""
    x = indicator_rows(rows, n_items)
    norm = np.sqrt(x.sum(axis=1, keepdims=True))
    return np.divide(x, norm, out=np.zeros_like(x), where=norm > 0)


def beta_at(step: int, config: RecommenderConfig, default_steps: int = 0) -> float:
    """KL weight ramping linearly from 0 to beta_max."""
    steps = config.beta_anneal_steps if config.beta_anneal_steps > 0 else default_steps
    if steps <= 0:
        return config.beta_max
    return config.beta_max * min(1.0, step / steps)


class Recommender:
    def __init__(self, config: RecommenderConfig):
        try:
            self.kind = RecommenderKind(config.kind)
        except ValueError:
            raise ContractError(f"unknown recommender kind {config.kind!r}")
        if min(config.n_items, config.feedback_dim, config.hidden, config.latent) < 1:
            raise ContractError("recommender dimensions must be positive")
        if not 0.0 <= config.input_dropout_rate < 1.0:
            raise ContractError("input_dropout_rate must lie in [0, 1)")
        self.config = config

    def init_params(self, params: ParamSet, rng: np.random.Generator) -> None:
        c = self.config
        layers = [("theta.enc.0", c.n_items + c.feedback_dim, c.hidden, "tanh")]
        if self.kind is RecommenderKind.VAE:
            layers += [("theta.enc.mu", c.hidden, c.latent, "identity"),
                       ("theta.enc.logvar", c.hidden, c.latent, "identity")]
        else:
            layers += [("theta.enc.z", c.hidden, c.latent, "tanh")]
        layers += [("theta.dec.0", c.latent, c.hidden, "tanh"),
                   ("theta.dec.1", c.hidden, c.n_items, "softmax")]
        for prefix, fan_in, fan_out, activation in layers:
            W, b = init_dense(fan_in, fan_out, activation, rng)
            params.add(f"{prefix}.W", THETA, W)
            params.add(f"{prefix}.b", THETA, b)

    def encode(self, params: Mapping[str, Tensor], x_norm, v, dropout_on: bool = False,
               rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, Optional[Tensor]]:
        c = self.config
        x = np.asarray(x_norm.data if isinstance(x_norm, Tensor) else x_norm, dtype=np.float64)
        v = v if isinstance(v, Tensor) else Tensor(v)
        if x.ndim != 2 or x.shape[1] != c.n_items:
            raise ShapeError(f"observation must be (batch, {c.n_items}), got {x.shape}")
        if v.ndim != 2 or v.shape != (x.shape[0], c.feedback_dim):
            raise ShapeError(f"feedback must be ({x.shape[0]}, {c.feedback_dim}), got {v.shape}")

        if dropout_on and c.input_dropout_rate > 0:
            if rng is None:
                raise ContractError("dropout needs a noise stream")
            keep = rng.random(x.shape) >= c.input_dropout_rate
            x = x * keep / (1.0 - c.input_dropout_rate)

        hidden = forward_layer(concat([Tensor(x), v], axis=1),
                               params["theta.enc.0.W"], params["theta.enc.0.b"], "tanh")
        if self.kind is RecommenderKind.DAE:
            return forward_layer(hidden, params["theta.enc.z.W"], params["theta.enc.z.b"], "tanh"), None
        mu = forward_layer(hidden, params["theta.enc.mu.W"], params["theta.enc.mu.b"], "identity")
        logvar = forward_layer(hidden, params["theta.enc.logvar.W"], params["theta.enc.logvar.b"], "identity")
        return mu, logvar

    @staticmethod
    def reparameterize(mu: Tensor, logvar: Optional[Tensor], mode=SampleMode.MEAN,
                       rng: Optional[np.random.Generator] = None) -> Tensor:
        if logvar is None or SampleMode(mode) is SampleMode.MEAN:
            return mu
        if logvar.shape != mu.shape:
            raise ShapeError(f"mu {mu.shape} and logvar {logvar.shape} differ")
        if rng is None:
            raise ContractError("sampling needs a noise stream")
        eps = rng.standard_normal(mu.shape)
        return mu + (logvar * 0.5).exp() * eps

    def decode_logits(self, params: Mapping[str, Tensor], z: Tensor) -> Tensor:
        if z.shape[-1] != self.config.latent:
            raise ShapeError(f"latent code must have width {self.config.latent}, got {z.shape}")
        hidden = forward_layer(z, params["theta.dec.0.W"], params["theta.dec.0.b"], "tanh")
        return forward_layer(hidden, params["theta.dec.1.W"], params["theta.dec.1.b"], "identity")

    def decode(self, params: Mapping[str, Tensor], z: Tensor) -> Tensor:
        return self.decode_logits(params, z).softmax(axis=-1)

    def forward(self, params: Mapping[str, Tensor], x_norm, v, mode=SampleMode.MEAN, dropout_on: bool = False,
                rng: Optional[np.random.Generator] = None) -> PolicyOutput:
        mu, logvar = self.encode(params, x_norm, v, dropout_on=dropout_on, rng=rng)
        z = self.reparameterize(mu, logvar, mode=mode, rng=rng)
        logits = self.decode_logits(params, z)
        return PolicyOutput(logits=logits, a=logits.softmax(axis=-1), mu=mu, logvar=logvar)


def elbo_loss(x_rows, logits: Tensor, mu: Tensor, logvar: Optional[Tensor], beta: float) -> Tensor:
    """Negative ELBO summed over the batch.

    Accepts a single item set with 1-D tensors, or a list of item sets with
    one tensor row per set.
    """
    if beta < 0:
        raise ContractError("beta must be non-negative")
    if logits.ndim == 1:
        x_rows, logits = [x_rows], logits.reshape(1, -1)
        mu = mu.reshape(1, -1)
        logvar = None if logvar is None else logvar.reshape(1, -1)
    if len(x_rows) != logits.shape[0]:
        raise ShapeError(f"{len(x_rows)} item sets for {logits.shape[0]} logit rows")
    if any(len(row) == 0 for row in x_rows):
        raise ContractError("elbo_loss needs a non-empty item set per user")

    mask = indicator_rows(x_rows, logits.shape[1])
    nll = -(logits.log_softmax(axis=-1) * mask).sum()
    if logvar is None or beta == 0:
        return nll
    return nll + kl_divergence(mu, logvar) * beta


def kl_divergence(mu: Tensor, logvar: Optional[Tensor]) -> Tensor:
    if logvar is None:
        return Tensor(0.0)
    return ((logvar.exp() + mu.square() - 1.0 - logvar) * 0.5).sum()


def entropy(logits: Tensor) -> Tensor:
    """Per-row entropy of softmax(logits)."""
    log_a = logits.log_softmax(axis=-1)
    return -(log_a.exp() * log_a).sum(axis=-1)


def l2_penalty(params: Mapping[str, Tensor], coefficient: float) -> Tensor:
    """coefficient * sum of squared recommender weight matrices (biases excluded)."""
    total = Tensor(0.0)
    for name, tensor in params.items():
        if name.startswith("theta.") and name.endswith(".W"):
            total = total + tensor.square().sum()
    return total * coefficient


def recommend_top_k(a, history: Sequence[int], k: int) -> TopK:
    """Highest-scoring items outside ``history``; ties go to the lower index."""
    if k < 1:
        raise ContractError("k must be at least 1")
    scores = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64).reshape(-1)
    excluded = np.zeros(scores.size, dtype=bool)
    excluded[list(history)] = True
    candidates = np.flatnonzero(~excluded)
    order = candidates[np.lexsort((candidates, -scores[candidates]))]
    return TopK(items=[int(j) for j in order[:k]], short=k > candidates.size)


def rank_batch(scores: np.ndarray, histories: Rows, k: int) -> List[np.ndarray]:
    """Top-k item indices per row, history items excluded.

    A row is shorter than k when fewer than k items lie outside its history.
    """
    scores = np.array(scores, dtype=np.float64)
    n_items = scores.shape[1]
    excluded = indicator_rows(histories, n_items).astype(bool)
    scores[excluded] = -np.inf
    index = np.broadcast_to(np.arange(n_items), scores.shape)
    order = np.lexsort((index, -scores), axis=-1)
    return [row[:min(k, n_items - int(mask.sum()))] for row, mask in zip(order, excluded)]
