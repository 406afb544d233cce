"""Epoch schedules of (k+n) ground-set training instances.

S mode tiles each user's chronological positives with disjoint windows of k;
R mode shuffles first and tiles the same way. When the length is not a
multiple of k the last window backs up to end at the final item, so every
positive is a target at least once and a user contributes ceil(P/k) <= P
instances.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dpp import GroundSetInstance
from .errors import ContractViolation, DataError
from .rng import rng_for

log = logging.getLogger(__name__)


def train_positive_keys(histories, num_items: int) -> np.ndarray:
    """Sorted ``user * num_items + item`` keys of every known positive."""
    parts = [u * num_items + np.asarray(h, dtype=np.int64) for u, h in enumerate(histories) if len(h)]
    if not parts:
        return np.zeros(0, dtype=np.int64)
    return np.unique(np.concatenate(parts))


def _contains(sorted_keys: np.ndarray, q: np.ndarray) -> np.ndarray:
    if sorted_keys.size == 0:
        return np.zeros(q.shape, dtype=bool)
    pos = np.searchsorted(sorted_keys, q)
    pos = np.minimum(pos, sorted_keys.size - 1)
    return sorted_keys[pos] == q


def sample_negatives(
    rng: np.random.Generator,
    users: np.ndarray,
    n: int,
    num_items: int,
    positive_keys: np.ndarray,
    max_rounds: int = 1000,
) -> np.ndarray:
    """For each entry of ``users`` draw n distinct items the user has not
    interacted with (uniform, without replacement). Whole rows are redrawn on
    any collision."""
    users = np.asarray(users, dtype=np.int64)
    out = np.empty((users.size, n), dtype=np.int64)
    todo = np.arange(users.size)
    for _ in range(max_rounds):
        if todo.size == 0:
            return out
        cand = rng.integers(0, num_items, size=(todo.size, n))
        bad = _contains(positive_keys, users[todo, None] * num_items + cand).any(axis=1)
        if n > 1:
            srt = np.sort(cand, axis=1)
            bad |= (np.diff(srt, axis=1) == 0).any(axis=1)
        good = ~bad
        out[todo[good]] = cand[good]
        todo = todo[bad]
    raise DataError(f"could not draw {n} distinct negatives for {todo.size} instances; too few unobserved items")


def window_starts(length: int, k: int) -> list[int]:
    """Disjoint stride-k windows; a short tail backs up to ``length - k``."""
    if length < k:
        return []
    starts = list(range(0, length - k + 1, k))
    if length % k:
        starts.append(length - k)
    return starts


@dataclass(frozen=True)
class EpochSchedule:
    users: np.ndarray      # (I,)
    targets: np.ndarray    # (I, k)
    negatives: np.ndarray  # (I, n)
    mode: str
    k: int
    n: int
    seed: int

    def __len__(self) -> int:
        return int(self.users.size)

    @property
    def instances(self) -> list[GroundSetInstance]:
        return [
            GroundSetInstance(int(u), tuple(t.tolist()), tuple(g.tolist()))
            for u, t, g in zip(self.users, self.targets, self.negatives)
        ]

    @property
    def items(self) -> np.ndarray:
        """Ground sets: targets then negatives, shape (I, k+n)."""
        return np.concatenate([self.targets, self.negatives], axis=1)


def _schedule(data, k: int, n: int, seed: int, epoch: int, mode: str) -> EpochSchedule:
    if k < 2:
        raise ContractViolation("k must be >= 2")
    if n < 1:
        raise ContractViolation("n must be >= 1")
    histories = data.training_positives()
    users, targets = [], []
    short = 0
    for u, hist in enumerate(histories):
        if len(hist) == 0:
            continue
        if len(hist) < k:
            short += 1
            continue
        if mode == "R":
            hist = hist[rng_for(seed, "R-groups", epoch, u).permutation(len(hist))]
        for s in window_starts(len(hist), k):
            users.append(u)
            targets.append(hist[s : s + k])
    if short:
        log.warning("%d users have fewer than k=%d training positives and were skipped", short, k)
    users = np.asarray(users, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64).reshape(-1, k)
    keys = train_positive_keys(histories, data.num_items)
    negatives = sample_negatives(rng_for(seed, "negatives", mode, epoch), users, n, data.num_items, keys)
    return EpochSchedule(users, targets, negatives, mode, k, n, seed)


def schedule_S(data, k: int, n: int, seed: int, epoch: int = 0) -> EpochSchedule:
    """Chronological windows of k positives, each with n fresh negatives."""
    return _schedule(data, k, n, seed, epoch, "S")


def schedule_R(data, k: int, n: int, seed: int, epoch: int = 0) -> EpochSchedule:
    """Seeded shuffle of each user's positives, then the same tiling."""
    return _schedule(data, k, n, seed, epoch, "R")


def build_schedule(data, mode: str, k: int, n: int, seed: int, epoch: int = 0) -> EpochSchedule:
    if mode == "S":
        return schedule_S(data, k, n, seed, epoch)
    if mode == "R":
        return schedule_R(data, k, n, seed, epoch)
    raise ContractViolation(f"unknown sampler {mode!r}")
