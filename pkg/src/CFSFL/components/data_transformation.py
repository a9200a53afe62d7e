import os
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np
import pandas as pd

from CFSFL import logger
from CFSFL.constants import (DATASET_MAGIC, DATASET_VERSION, SPLIT_MAGIC, TRAIN_FILE, VALIDATION_FILE,
                             TEST_FILE, ITEMS_FILE, USERS_FILE, SUMMARY_FILE)
from CFSFL.entity.artifact_entity import HeldOutUser, InteractionMatrix, RawInteraction, SplitSet
from CFSFL.entity.config_entity import DataPreparationConfig, SyntheticDataConfig
from CFSFL.exception import DataError, FormatError, ParameterError
from CFSFL.utils.common import noise_stream, save_json

# sub-stream tags for noise_stream
_SELECT_STREAM = 0
_FOLD_STREAM = 1
_SYNTHETIC_STREAM = 2


def preprocess(raw: Iterable[RawInteraction], rating_threshold: float = 4.0, min_items_per_user: int = 5,
               min_users_per_item: int = 0) -> InteractionMatrix:
    """Binarize, filter to a fixpoint and densely reindex.

    Users and items are indexed in sorted original-id order, so the result
    does not depend on the order of ``raw``.
    """
    if rating_threshold < 0 or min_items_per_user < 0 or min_users_per_item < 0:
        raise ParameterError("preprocessing thresholds must be non-negative")

    frame = pd.DataFrame(
        [(r.user_id, r.item_id, r.rating) for r in raw], columns=["user_id", "item_id", "rating"])
    frame = frame[frame["rating"] >= rating_threshold]
    frame = frame.drop_duplicates(subset=["user_id", "item_id"])[["user_id", "item_id"]]

    while True:
        size = len(frame)
        if min_users_per_item > 0:
            item_counts = frame.groupby("item_id")["user_id"].transform("size")
            frame = frame[item_counts >= min_users_per_item]
        if min_items_per_user > 0:
            user_counts = frame.groupby("user_id")["item_id"].transform("size")
            frame = frame[user_counts >= min_items_per_user]
        if len(frame) == size:
            break

    if frame.empty:
        raise DataError("no interactions left after filtering")

    user_ids = tuple(sorted(frame["user_id"].unique()))
    item_ids = tuple(sorted(frame["item_id"].unique()))
    user_index = {u: i for i, u in enumerate(user_ids)}
    item_index = {it: j for j, it in enumerate(item_ids)}

    rows: List[List[int]] = [[] for _ in user_ids]
    for u, it in zip(frame["user_id"], frame["item_id"]):
        rows[user_index[u]].append(item_index[it])

    matrix = InteractionMatrix(
        n_users=len(user_ids), n_items=len(item_ids),
        rows=tuple(tuple(sorted(r)) for r in rows),
        user_ids=user_ids, item_ids=item_ids)
    logger.info(f"preprocessed matrix: {matrix.n_users} users, {matrix.n_items} items, "
                f"{matrix.n_interactions} interactions")
    return matrix


def split_strong_generalization(m: InteractionMatrix, n_val_users: int, n_test_users: int,
                                fold_in_fraction: float = 0.8, seed: int = 98765) -> SplitSet:
    """Holds out whole users; each held-out history is split into fold-in and scored parts.

    Every random decision for user ``i`` comes from a stream keyed on
    (seed, i), so the split is independent of iteration order.
    """
    if n_val_users < 0 or n_test_users < 0 or n_val_users + n_test_users >= m.n_users:
        raise DataError(f"cannot hold out {n_val_users}+{n_test_users} of {m.n_users} users")
    if not 0.0 < fold_in_fraction < 1.0:
        raise ParameterError("fold_in_fraction must lie strictly between 0 and 1")

    eligible = [i for i, row in enumerate(m.rows) if len(row) >= 2]
    needed = n_val_users + n_test_users
    if len(eligible) < needed:
        raise DataError(f"only {len(eligible)} users have at least 2 items; {needed} needed")

    keys = np.array([noise_stream(seed, _SELECT_STREAM, i).random() for i in eligible])
    ranked = [eligible[p] for p in np.argsort(keys, kind="stable")]
    val_users = sorted(ranked[:n_val_users])
    test_users = sorted(ranked[n_val_users:needed])
    held = set(val_users) | set(test_users)

    user_ids = m.user_ids or tuple(str(i) for i in range(m.n_users))

    def hold_out(i: int) -> HeldOutUser:
        row = np.array(m.rows[i])
        shuffled = noise_stream(seed, _FOLD_STREAM, i).permutation(row)
        n_fold = min(max(int(np.floor(fold_in_fraction * len(row))), 1), len(row) - 1)
        return HeldOutUser(
            user_id=user_ids[i],
            fold_in=tuple(sorted(int(j) for j in shuffled[:n_fold])),
            held_out=tuple(sorted(int(j) for j in shuffled[n_fold:])))

    train_users = [i for i in range(m.n_users) if i not in held]
    train = InteractionMatrix(
        n_users=len(train_users), n_items=m.n_items,
        rows=tuple(m.rows[i] for i in train_users),
        user_ids=tuple(user_ids[i] for i in train_users),
        item_ids=m.item_ids)

    split = SplitSet(
        train=train,
        validation=tuple(hold_out(i) for i in val_users),
        test=tuple(hold_out(i) for i in test_users))
    logger.info(f"split: {train.n_users} train users, {len(split.validation)} validation, {len(split.test)} test")
    return split


def generate_synthetic(n_users: int, n_items: int, rank: int, avg_items_per_user: float, seed: int,
                       factor_scale: float = 1.0) -> InteractionMatrix:
    """Low-rank implicit-feedback matrix.

    Each user draws items without replacement with probability proportional
    to softmax(u . V^T) (Gumbel top-k); the per-user counts sum to
    round(avg_items_per_user * n_users).
    """
    if n_users < 1 or n_items < 1 or rank < 1:
        raise ParameterError("n_users, n_items and rank must be positive")
    if rank > min(n_users, n_items):
        raise ParameterError(f"rank {rank} exceeds min(n_users, n_items)")
    if avg_items_per_user < 2:
        raise ParameterError("avg_items_per_user must be at least 2")
    if avg_items_per_user > n_items:
        raise ParameterError(f"density infeasible: {avg_items_per_user} items per user with only {n_items} items")

    rng = noise_stream(seed, _SYNTHETIC_STREAM)
    users = rng.standard_normal((n_users, rank)) * factor_scale
    items = rng.standard_normal((n_items, rank)) * factor_scale

    total = int(round(avg_items_per_user * n_users))
    counts = np.full(n_users, total // n_users, dtype=np.int64)
    counts[rng.choice(n_users, size=total - counts.sum(), replace=False)] += 1

    logits = users @ items.T
    rows = []
    for u in range(n_users):
        keys = logits[u] + rng.gumbel(size=n_items)
        chosen = np.argsort(-keys, kind="stable")[:counts[u]]
        rows.append(tuple(sorted(int(j) for j in chosen)))

    return InteractionMatrix(
        n_users=n_users, n_items=n_items, rows=tuple(rows),
        user_ids=tuple(str(i) for i in range(n_users)),
        item_ids=tuple(str(j) for j in range(n_items)))


def write_dataset(m: InteractionMatrix, path: Path) -> None:
    lines = [f"{DATASET_MAGIC} {DATASET_VERSION} {m.n_users} {m.n_items}"]
    lines.extend(" ".join(str(j) for j in row) for row in m.rows)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_header(line: str, magic: str, path: Path) -> Tuple[int, int]:
    parts = line.split()
    if len(parts) != 4 or parts[0] != magic or parts[1] != DATASET_VERSION or not (parts[2] + parts[3]).isdigit():
        raise FormatError(f"{path}: expected header '{magic} {DATASET_VERSION} <n_users> <n_items>'")
    return int(parts[2]), int(parts[3])


def _parse_items(text: str, n_items: int, path: Path) -> Tuple[int, ...]:
    try:
        items = tuple(int(t) for t in text.split())
    except ValueError:
        raise FormatError(f"{path}: non-integer item index in {text.strip()!r}")
    if any(j < 0 or j >= n_items for j in items) or any(a >= b for a, b in zip(items, items[1:])):
        raise FormatError(f"{path}: item indices must be strictly increasing and below {n_items}")
    return items


def read_dataset(path: Path) -> InteractionMatrix:
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    n_users, n_items = _read_header(lines[0], DATASET_MAGIC, path)
    body = lines[1:1 + n_users]
    if len(body) != n_users:
        raise FormatError(f"{path}: expected {n_users} user lines, found {len(body)}")
    rows = tuple(_parse_items(line, n_items, path) for line in body)
    return InteractionMatrix(n_users=n_users, n_items=n_items, rows=rows)


def write_split(users: Sequence[HeldOutUser], n_items: int, path: Path) -> None:
    lines = [f"{SPLIT_MAGIC} {DATASET_VERSION} {len(users)} {n_items}"]
    for user in users:
        if not user.user_id or any(c.isspace() or c == "|" for c in user.user_id):
            raise FormatError(f"user id {user.user_id!r} cannot be written to a split file")
        fold = " ".join(str(j) for j in user.fold_in)
        held = " ".join(str(j) for j in user.held_out)
        lines.append(f"{user.user_id} | {fold} | {held}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_split(path: Path) -> Tuple[Tuple[HeldOutUser, ...], int]:
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    n_users, n_items = _read_header(lines[0], SPLIT_MAGIC, path)
    users = []
    for line in lines[1:1 + n_users]:
        parts = line.split("|")
        if len(parts) != 3:
            raise FormatError(f"{path}: malformed split line {line!r}")
        users.append(HeldOutUser(
            user_id=parts[0].strip(),
            fold_in=_parse_items(parts[1], n_items, path),
            held_out=_parse_items(parts[2], n_items, path)))
    if len(users) != n_users:
        raise FormatError(f"{path}: expected {n_users} users, found {len(users)}")
    return tuple(users), n_items


def summarize(split: SplitSet) -> Dict[str, float]:
    """Dataset statistics in the shape of a benchmark summary table."""
    held = split.validation + split.test
    n_users = split.train.n_users + len(held)
    n_interactions = split.train.n_interactions + sum(len(u.fold_in) + len(u.held_out) for u in held)
    return {
        "n_users": n_users,
        "n_items": split.n_items,
        "n_interactions": n_interactions,
        "n_train_users": split.train.n_users,
        "n_validation_users": len(split.validation),
        "n_test_users": len(split.test),
        "n_heldout_users": len(held),
        "sparsity_percent": 100.0 * n_interactions / (n_users * split.n_items),
    }


def save_split_set(split: SplitSet, root_dir: Path) -> Dict[str, float]:
    root_dir = Path(root_dir)
    os.makedirs(root_dir, exist_ok=True)
    write_dataset(split.train, root_dir / TRAIN_FILE)
    write_split(split.validation, split.n_items, root_dir / VALIDATION_FILE)
    write_split(split.test, split.n_items, root_dir / TEST_FILE)
    item_ids = split.train.item_ids or tuple(str(j) for j in range(split.n_items))
    pd.DataFrame({"index": range(split.n_items), "item_id": item_ids}).to_csv(root_dir / ITEMS_FILE, index=False)
    user_ids = split.train.user_ids or tuple(str(i) for i in range(split.train.n_users))
    pd.DataFrame({"index": range(split.train.n_users), "user_id": user_ids}).to_csv(
        root_dir / USERS_FILE, index=False)
    summary = summarize(split)
    save_json(path=root_dir / SUMMARY_FILE, data=summary)
    logger.info(f"dataset written to {root_dir}")
    return summary


def load_split_set(root_dir: Path) -> SplitSet:
    root_dir = Path(root_dir)
    train = read_dataset(root_dir / TRAIN_FILE)
    validation, n_val_items = read_split(root_dir / VALIDATION_FILE)
    test, n_test_items = read_split(root_dir / TEST_FILE)
    if not n_val_items == n_test_items == train.n_items:
        raise FormatError(f"{root_dir}: split files disagree on the item vocabulary")

    item_ids: Tuple[str, ...] = ()
    user_ids: Tuple[str, ...] = ()
    if (root_dir / ITEMS_FILE).exists():
        item_ids = tuple(pd.read_csv(root_dir / ITEMS_FILE, dtype=str)["item_id"])
    if (root_dir / USERS_FILE).exists():
        user_ids = tuple(pd.read_csv(root_dir / USERS_FILE, dtype=str)["user_id"])
    train = InteractionMatrix(n_users=train.n_users, n_items=train.n_items, rows=train.rows,
                              user_ids=user_ids, item_ids=item_ids)
    return SplitSet(train=train, validation=validation, test=test)


class DataTransformation:
    def __init__(self, config: DataPreparationConfig):
        self.config = config

    def transform(self, raw: Iterable[RawInteraction]) -> SplitSet:
        matrix = preprocess(raw, self.config.rating_threshold, self.config.min_items_per_user,
                            self.config.min_users_per_item)
        return self.split(matrix)

    def synthesize(self, synthetic: SyntheticDataConfig) -> SplitSet:
        matrix = generate_synthetic(synthetic.n_users, synthetic.n_items, synthetic.rank,
                                    synthetic.avg_items_per_user, synthetic.seed, synthetic.factor_scale)
        return self.split(matrix)

    def split(self, matrix: InteractionMatrix) -> SplitSet:
        return split_strong_generalization(matrix, self.config.n_val_users, self.config.n_test_users,
                                           self.config.fold_in_fraction, self.config.seed)

    def save(self, split: SplitSet) -> Dict[str, float]:
        return save_split_set(split, self.config.root_dir)
