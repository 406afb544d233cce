"""Item diversity kernels.

Two forms are supported:

* ``pretrained``: a low-rank factor V (num_items x r) with K_ij = <V_i, V_j>,
  learned so that observed category-diverse item sets get larger log-dets
  than sets of unobserved items. Frozen once trained.
* ``gaussian``: K_ij = exp(-||e_i - e_j||^2 / (2 sigma^2)) over the live item
  embeddings, so gradients reach the embeddings through K.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _backend
from ._backend import njit
from .data import InteractionDataset
from .errors import ContractViolation, DataError, TrainingError
from .linalg import lu_slogdet_inv_nb
from .rng import rng_for
from .sampling import sample_negatives, train_positive_keys

log = logging.getLogger(__name__)

JITTER = 1e-6
DEFAULT_RANK = 64
CHECKPOINT_MAGIC = "lkp-divkernel"
CHECKPOINT_VERSION = "v1"


@dataclass
class DiversityKernel:
    mode: str
    V: np.ndarray | None = None
    sigma: float | None = None
    frozen: bool = True
    trace: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.mode not in ("pretrained", "gaussian"):
            raise ContractViolation(f"unknown kernel mode {self.mode!r}")
        if self.mode == "pretrained":
            if self.V is None or np.ndim(self.V) != 2:
                raise ContractViolation("pretrained kernels need a 2-D factor V")
            self.V = np.ascontiguousarray(self.V, dtype=np.float64)
        elif self.sigma is not None and not self.sigma > 0:
            raise ContractViolation("sigma must be positive")

    @classmethod
    def identity(cls, num_items: int) -> DiversityKernel:
        """K = I, handy for checks against the uniform k-DPP."""
        return cls("pretrained", V=np.eye(num_items), frozen=True)

    @classmethod
    def gaussian(cls, sigma: float | None = None) -> DiversityKernel:
        return cls("gaussian", sigma=sigma, frozen=False)

    @property
    def num_items(self) -> int | None:
        return None if self.V is None else self.V.shape[0]

    @property
    def rank(self) -> int | None:
        return None if self.V is None else self.V.shape[1]

    def gram(self, items, item_vecs: np.ndarray | None = None) -> np.ndarray:
        """K restricted to ``items``; accepts a (..., m) index array."""
        items = np.asarray(items, dtype=np.int64)
        if self.mode == "pretrained":
            if items.size and (items.min() < 0 or items.max() >= self.V.shape[0]):
                bad = items[(items < 0) | (items >= self.V.shape[0])].ravel()[0]
                raise KeyError(f"item {int(bad)} is not covered by the diversity kernel")
            X = self.V[items]
            return X @ np.swapaxes(X, -1, -2)
        if item_vecs is None:
            raise ContractViolation("gaussian kernels need the live item embeddings")
        if self.sigma is None:
            raise ContractViolation("gaussian kernel sigma is unset")
        X = item_vecs[items]
        return gaussian_gram(X, self.sigma)

    # -- checkpoint ---------------------------------------------------------

    def save(self, path) -> None:
        if self.mode != "pretrained":
            raise ContractViolation("only pretrained kernels have a checkpoint form")
        n, r = self.V.shape
        with open(path, "wb") as fh:
            fh.write(f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION} {n} {r}\n".encode())
            fh.write(self.V.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> DiversityKernel:
        raw = Path(path).read_bytes()
        head, sep, body = raw.partition(b"\n")
        parts = head.decode(errors="replace").split()
        if not sep or len(parts) != 4 or parts[0] != CHECKPOINT_MAGIC or parts[1] != CHECKPOINT_VERSION:
            raise DataError(f"{path}: not an {CHECKPOINT_MAGIC} {CHECKPOINT_VERSION} file")
        n, r = int(parts[2]), int(parts[3])
        if len(body) != n * r * 8:
            raise DataError(f"{path}: expected {n * r * 8} payload bytes, found {len(body)}")
        V = np.frombuffer(body, dtype="<f8").reshape(n, r).astype(np.float64)
        return cls("pretrained", V=V, frozen=True)


def gaussian_entry(vi, vj, sigma: float) -> float:
    vi = np.asarray(vi, dtype=np.float64)
    vj = np.asarray(vj, dtype=np.float64)
    if vi.shape != vj.shape:
        raise ContractViolation("vectors must have equal dimension")
    if not sigma > 0:
        raise ContractViolation("sigma must be positive")
    d = vi - vj
    return math.exp(-float(d @ d) / (2.0 * sigma * sigma))


def gaussian_gram(X: np.ndarray, sigma: float) -> np.ndarray:
    """Pairwise Gaussian similarities of the rows of X (..., m, d)."""
    sq = np.sum(X * X, axis=-1)
    d2 = sq[..., :, None] + sq[..., None, :] - 2.0 * (X @ np.swapaxes(X, -1, -2))
    d2 = np.maximum(d2, 0.0)
    m = X.shape[-2]
    d2[..., np.arange(m), np.arange(m)] = 0.0
    return np.exp(-d2 / (2.0 * sigma * sigma))


def median_sigma(item_vecs: np.ndarray, rng: np.random.Generator, num_pairs: int = 1000) -> float:
    """Median pairwise distance over a random sample of item pairs."""
    n = item_vecs.shape[0]
    i = rng.integers(0, n, size=num_pairs)
    j = rng.integers(0, n, size=num_pairs)
    keep = i != j
    dist = np.linalg.norm(item_vecs[i[keep]] - item_vecs[j[keep]], axis=1)
    med = float(np.median(dist)) if dist.size else 0.0
    return med if med > 0 else 1.0


# ---------------------------------------------------------------------------
# training pairs


@dataclass
class DiversePairSet:
    plus: np.ndarray   # (P, set_size) observed diverse sets
    minus: np.ndarray  # (P, set_size) sets of unobserved items
    set_size: int
    users: np.ndarray | None = None

    def __len__(self):
        return self.plus.shape[0]

    @property
    def pairs(self) -> list[tuple[list[int], list[int]]]:
        return [(p.tolist(), m.tolist()) for p, m in zip(self.plus, self.minus)]


def default_min_categories(set_size: int) -> int:
    return min(set_size, math.ceil(set_size / 2) + 1)


def qualifying_windows(history: np.ndarray, categories: np.ndarray, set_size: int, min_categories: int):
    """Start offsets of stride-1 windows covering >= min_categories categories."""
    starts = []
    for s in range(len(history) - set_size + 1):
        if len(set(categories[history[s : s + set_size]].tolist())) >= min_categories:
            starts.append(s)
    return starts


def build_diverse_training_pairs(
    data: InteractionDataset,
    set_size: int = 5,
    min_categories: int | None = None,
    seed: int = 0,
) -> DiversePairSet:
    """Slide a window over each user's chronological (training) positives;
    windows spanning enough categories become T+ and are paired with a T- of
    uniformly drawn unobserved items."""
    if set_size < 2:
        raise ContractViolation("set_size must be >= 2")
    if min_categories is None:
        min_categories = default_min_categories(set_size)
    if min_categories > set_size:
        raise ContractViolation("min_categories cannot exceed set_size")
    histories = data.training_positives()
    plus, users = [], []
    for u, hist in enumerate(histories):
        if len(hist) < set_size:
            continue
        for s in qualifying_windows(hist, data.categories, set_size, min_categories):
            plus.append(hist[s : s + set_size])
            users.append(u)
    if not plus:
        log.warning("no diverse windows found (set_size=%d, min_categories=%d)", set_size, min_categories)
        empty = np.zeros((0, set_size), dtype=np.int64)
        return DiversePairSet(empty, empty.copy(), set_size, np.zeros(0, dtype=np.int64))
    users = np.asarray(users, dtype=np.int64)
    keys = train_positive_keys(histories, data.num_items)
    minus = sample_negatives(rng_for(seed, "diverse-pairs"), users, set_size, data.num_items, keys)
    return DiversePairSet(np.asarray(plus, dtype=np.int64), minus, set_size, users)


# ---------------------------------------------------------------------------
# kernel objective


def set_logdet(V: np.ndarray, items, jitter: float = JITTER) -> float:
    X = V[np.asarray(items)]
    sign, ld = np.linalg.slogdet(X @ X.T + jitter * np.eye(len(X)))
    return ld if sign > 0 else -np.inf


def kernel_objective(V: np.ndarray, pairs: DiversePairSet, jitter: float = JITTER) -> float:
    """Sum over pairs of log det(K_T+) - log det(K_T-)."""
    if len(pairs) == 0:
        return 0.0
    if _backend.USE_NUMBA:
        return float(_objective_nb(V, pairs.plus, pairs.minus, jitter))
    return float(np.sum(_batch_logdet_np(V, pairs.plus, jitter) - _batch_logdet_np(V, pairs.minus, jitter)))


def kernel_objective_grad(V: np.ndarray, pairs: DiversePairSet, jitter: float = JITTER) -> np.ndarray:
    """d objective / dV, using d log det(X X^T + eps I) = 2 (K_T)^-1 X."""
    G = np.zeros_like(V)
    for sets, sgn in ((pairs.plus, 1.0), (pairs.minus, -1.0)):
        if len(sets) == 0:
            continue
        X = V[sets]
        K = X @ np.swapaxes(X, -1, -2) + jitter * np.eye(sets.shape[1])
        np.add.at(G, sets, sgn * 2.0 * np.linalg.solve(K, X))
    return G


def _batch_logdet_np(V, sets, jitter):
    X = V[sets]
    K = X @ np.swapaxes(X, -1, -2) + jitter * np.eye(sets.shape[1])
    sign, ld = np.linalg.slogdet(K)
    return np.where(sign > 0, ld, -np.inf)


@njit
def _set_gram(V, items, jitter, K):
    t = items.shape[0]
    r = V.shape[1]
    for a in range(t):
        for b in range(a, t):
            acc = 0.0
            for c in range(r):
                acc += V[items[a], c] * V[items[b], c]
            K[a, b] = acc
            K[b, a] = acc
        K[a, a] += jitter


@njit
def _objective_nb(V, plus, minus, jitter):
    t = plus.shape[1]
    K = np.empty((t, t))
    total = 0.0
    for p in range(plus.shape[0]):
        _set_gram(V, plus[p], jitter, K)
        s1, l1, _ = lu_slogdet_inv_nb(K, False)
        _set_gram(V, minus[p], jitter, K)
        s2, l2, _ = lu_slogdet_inv_nb(K, False)
        if s1 <= 0.0 or s2 <= 0.0:
            return np.nan
        total += l1 - l2
    return total


@njit
def _ascent_step_nb(V, items, sgn, lr, jitter, K, unit_rows):
    """V[items] += sgn * lr * 2 inv(K_T) V[items], optionally followed by
    projecting the moved rows back to unit length; returns the pre-step log det."""
    t = items.shape[0]
    r = V.shape[1]
    _set_gram(V, items, jitter, K)
    sign, ld, inv = lu_slogdet_inv_nb(K, True)
    if sign <= 0.0:
        return np.nan
    step = np.zeros((t, r))
    for a in range(t):
        for b in range(t):
            w = inv[a, b]
            for c in range(r):
                step[a, c] += w * V[items[b], c]
    for a in range(t):
        for c in range(r):
            V[items[a], c] += sgn * lr * 2.0 * step[a, c]
    if unit_rows:
        for a in range(t):
            nrm = 0.0
            for c in range(r):
                nrm += V[items[a], c] ** 2
            nrm = np.sqrt(nrm)
            if nrm > 0.0:
                for c in range(r):
                    V[items[a], c] /= nrm
    return ld


@njit
def _sgd_epoch_nb(V, plus, minus, order, lr, jitter, unit_rows):
    t = plus.shape[1]
    K = np.empty((t, t))
    for idx in range(order.shape[0]):
        p = order[idx]
        a = _ascent_step_nb(V, plus[p], 1.0, lr, jitter, K, unit_rows)
        b = _ascent_step_nb(V, minus[p], -1.0, lr, jitter, K, unit_rows)
        if not (np.isfinite(a) and np.isfinite(b)):
            return idx
    return -1


def _unit(X):
    nrm = np.linalg.norm(X, axis=-1, keepdims=True)
    return np.divide(X, nrm, out=X.copy(), where=nrm > 0)


def _sgd_epoch_np(V, plus, minus, order, lr, jitter, unit_rows):
    for idx, p in enumerate(order):
        for items, sgn in ((plus[p], 1.0), (minus[p], -1.0)):
            X = V[items]
            K = X @ X.T + jitter * np.eye(len(items))
            sign, _ = np.linalg.slogdet(K)
            if sign <= 0:
                return idx
            V[items] += sgn * lr * 2.0 * np.linalg.solve(K, X)
            if unit_rows:
                V[items] = _unit(V[items])
    return -1


def init_factor(num_items: int, rank: int, seed: int, unit_rows: bool = False) -> np.ndarray:
    bound = 0.5 / math.sqrt(rank)
    V = rng_for(seed, "divkernel-init").uniform(-bound, bound, size=(num_items, rank))
    return _unit(V) if unit_rows else V


def train_diversity_kernel(
    pairs: DiversePairSet,
    num_items: int,
    rank: int = DEFAULT_RANK,
    epochs: int = 10,
    learning_rate: float = 1e-2,
    seed: int = 0,
    *,
    jitter: float = JITTER,
    unit_rows: bool = True,
) -> DiversityKernel:
    """Stochastic ascent on sum log det(K_T+) - log det(K_T-) over pairs.

    Each pair is one step: T+ rows move along +2 inv(K_T+) V_T+, T- rows along
    -2 inv(K_T-) V_T-. The objective after every epoch lands in ``trace``.

    With ``unit_rows`` each moved row is projected back to unit length, so
    K_ii = 1 and the kernel carries only angular (diversity) information.
    Unconstrained ascent otherwise grows the norms of frequently observed
    items, which leaks popularity into K and skews the initial k-DPP.
    """
    if rank < pairs.set_size:
        raise ContractViolation(f"rank ({rank}) must be >= set size ({pairs.set_size})")
    V = init_factor(num_items, rank, seed, unit_rows)
    trace: list[float] = []
    if len(pairs):
        plus = np.ascontiguousarray(pairs.plus, dtype=np.int64)
        minus = np.ascontiguousarray(pairs.minus, dtype=np.int64)
        for epoch in range(epochs):
            order = rng_for(seed, "divkernel-order", epoch).permutation(len(pairs)).astype(np.int64)
            if _backend.USE_NUMBA:
                bad = _sgd_epoch_nb(V, plus, minus, order, learning_rate, jitter, unit_rows)
            else:
                bad = _sgd_epoch_np(V, plus, minus, order, learning_rate, jitter, unit_rows)
            if bad >= 0:
                raise TrainingError(f"non-finite kernel objective at epoch {epoch}, pair {int(order[bad])}")
            obj = kernel_objective(V, pairs, jitter)
            if not np.isfinite(obj):
                raise TrainingError(f"non-finite kernel objective at epoch {epoch}, pair <all>")
            trace.append(obj)
            log.debug("kernel epoch %d objective %.4f", epoch, obj)
    return DiversityKernel("pretrained", V=V, frozen=True, trace=trace)
