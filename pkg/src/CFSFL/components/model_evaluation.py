import time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from CFSFL import logger
from CFSFL.components.loop_engine import LoopMode, unroll
from CFSFL.components.model_bundle import ModelBundle
from CFSFL.components.recommender import rank_batch
from CFSFL.constants import CSV_FLOAT_FORMAT, EVAL_METRICS_COLUMNS
from CFSFL.entity.artifact_entity import HeldOutUser, MetricResult, SplitSet
from CFSFL.entity.config_entity import EvaluationConfig
from CFSFL.exception import CheckpointError, ContractError

ScoreFn = Callable[[Sequence[HeldOutUser]], np.ndarray]
METRICS = ("recall", "ndcg")
EVAL_CHUNK = 500


def recall_at_k(ranked: Sequence[int], relevant, k: int) -> Optional[float]:
    """Hits in the top k over min(k, |relevant|); None when nothing is relevant."""
    if k < 1:
        raise ContractError("k must be at least 1")
    relevant = set(relevant)
    if not relevant:
        return None
    hits = sum(1 for item in list(ranked)[:k] if item in relevant)
    return hits / min(k, len(relevant))


def ndcg_at_k(ranked: Sequence[int], relevant, k: int) -> Optional[float]:
    """Binary-gain NDCG over the top k; None when nothing is relevant."""
    if k < 1:
        raise ContractError("k must be at least 1")
    relevant = set(relevant)
    if not relevant:
        return None
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    gains = np.array([1.0 if item in relevant else 0.0 for item in list(ranked)[:k]])
    dcg = float(np.dot(gains, discounts[:gains.size]))
    idcg = float(discounts[:min(k, len(relevant))].sum())
    return dcg / idcg


_METRIC_FNS = {"recall": recall_at_k, "ndcg": ndcg_at_k}


def _score_chunk(score_fn: ScoreFn, users: Sequence[HeldOutUser], k_list: Sequence[int]) -> Dict[tuple, list]:
    scores = np.asarray(score_fn(users), dtype=np.float64)
    if scores.shape[0] != len(users):
        raise ContractError(f"score_fn returned {scores.shape[0]} rows for {len(users)} users")
    ranked = rank_batch(scores, [u.fold_in for u in users], max(k_list))
    out = {(m, k): [] for m in METRICS for k in k_list}
    for row, user in zip(ranked, users):
        for k in k_list:
            for m in METRICS:
                out[(m, k)].append(_METRIC_FNS[m](row, user.held_out, k))
    return out


def evaluate_rankings(score_fn: ScoreFn, heldout: Sequence[HeldOutUser], k_list: Sequence[int],
                      T: int = 0, threads: int = 1, chunk_size: int = EVAL_CHUNK) -> List[MetricResult]:
    """Recall@k and NDCG@k averaged over held-out users.

    ``score_fn`` maps a chunk of users to one score row per user over all
    items; fold-in items are never ranked. Users without held-out items are
    skipped and counted.
    """
    k_list = sorted(set(int(k) for k in k_list))
    if not k_list or k_list[0] < 1:
        raise ContractError("k_list needs positive entries")
    users = [u for u in heldout if u.held_out]
    skipped = len(heldout) - len(users)
    if skipped:
        logger.warning(f"skipping {skipped} held-out user(s) with nothing held out")

    chunks = [users[i:i + chunk_size] for i in range(0, len(users), chunk_size)]
    parts = Parallel(n_jobs=max(1, threads), prefer="threads")(
        delayed(_score_chunk)(score_fn, chunk, k_list) for chunk in chunks)

    results = []
    for m in METRICS:
        for k in k_list:
            values = [v for part in parts for v in part[(m, k)]]
            value = float(np.sum(values) / len(values)) if values else 0.0
            results.append(MetricResult(metric=m, k=k, value=value, n_users_evaluated=len(values),
                                        T=T, n_users_skipped=skipped))
    return results


def model_scores(bundle: ModelBundle, T: int) -> ScoreFn:
    def score(users: Sequence[HeldOutUser]) -> np.ndarray:
        return unroll([u.fold_in for u in users], bundle, T, mode=LoopMode.EVAL).final.a.data
    return score


def evaluate_model(bundle: ModelBundle, heldout: Sequence[HeldOutUser], T: int, k_list: Sequence[int],
                   threads: int = 1) -> List[MetricResult]:
    largest = max((max(u.fold_in + u.held_out) for u in heldout if u.fold_in + u.held_out), default=-1)
    if largest >= bundle.n_items:
        raise CheckpointError(f"held-out item index {largest} is outside the model's {bundle.n_items} items")
    return evaluate_rankings(model_scores(bundle, T), heldout, k_list, T=T, threads=threads)


def measure_inference_cost(bundle: ModelBundle, heldout: Sequence[HeldOutUser], T_list: Sequence[int],
                           repeats: int = 1) -> Dict[int, float]:
    """Best-of-``repeats`` wall-clock seconds to score every user at each T."""
    rows = [u.fold_in for u in heldout]
    if not rows:
        raise ContractError("no users to time")
    cost = {}
    for T in T_list:
        best = float("inf")
        for _ in range(max(1, repeats)):
            start = time.perf_counter()
            for i in range(0, len(rows), EVAL_CHUNK):
                unroll(rows[i:i + EVAL_CHUNK], bundle, T, mode=LoopMode.EVAL)
            best = min(best, time.perf_counter() - start)
        cost[int(T)] = best
        logger.info(f"inference over {len(rows)} users at T={T}: {best:.4f}s")
    return cost


def results_frame(results: Sequence[MetricResult], split: str) -> pd.DataFrame:
    return pd.DataFrame(
        [(split, r.metric, r.k, r.T, r.value, r.n_users_evaluated) for r in results],
        columns=EVAL_METRICS_COLUMNS)


class ModelEvaluation:
    def __init__(self, config: EvaluationConfig):
        self.config = config

    def heldout(self, split: SplitSet, name: Optional[str] = None) -> Sequence[HeldOutUser]:
        name = name or self.config.split
        if name not in ("validation", "test"):
            raise ContractError(f"unknown split {name!r}")
        return split.validation if name == "validation" else split.test

    def evaluate(self, bundle: ModelBundle, split: SplitSet, T_list: Optional[Sequence[int]] = None,
                 k_list: Optional[Sequence[int]] = None) -> pd.DataFrame:
        bundle.check_vocabulary(split.n_items)
        heldout = self.heldout(split)
        frames = []
        for T in T_list if T_list is not None else self.config.T_list:
            start = time.perf_counter()
            results = evaluate_model(bundle, heldout, T, k_list or self.config.k_list, threads=self.config.threads)
            logger.info(f"evaluated {len(heldout)} {self.config.split} users at T={T} "
                        f"in {time.perf_counter() - start:.3f}s")
            frames.append(results_frame(results, self.config.split))
        return pd.concat(frames, ignore_index=True)

    def save_metrics(self, frame: pd.DataFrame, path: Optional[Path] = None) -> Path:
        path = Path(path or self.config.metric_file_name)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
        logger.info(f"metrics written to {path}")
        return path
