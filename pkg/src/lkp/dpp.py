"""Personalized k-DPPs over (k+n)-item ground sets.

The kernel for user u over ground set items i, j is

    L_ij = q_i * K_ij * q_j + eps * [i == j],   q_i = exp(clip(<e_u, e_i>, -20, 20))

and a k-subset S has probability det(L_S) / e_k(eigenvalues of L).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import TYPE_CHECKING

import numpy as np

from . import kernels
from .errors import ContractViolation, EnumerationTooLarge
from .linalg import SmallSymMatrix, eigenvalues_sym, log_esp, slogdet

if TYPE_CHECKING:
    from .diversity import DiversityKernel
    from .model import EmbeddingTable

SCORE_CLAMP = 20.0
JITTER = 1e-6
MAX_ENUMERATION = 20


@dataclass(frozen=True)
class GroundSetInstance:
    """One training unit: k observed targets followed by n unobserved items."""

    user: int
    targets: tuple[int, ...]
    negatives: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        object.__setattr__(self, "negatives", tuple(int(g) for g in self.negatives))
        if self.k < 2:
            raise ContractViolation("an instance needs k >= 2 targets")
        if self.n < 1:
            raise ContractViolation("an instance needs n >= 1 negatives")
        if len(set(self.targets)) != self.k or len(set(self.negatives)) != self.n:
            raise ContractViolation("duplicate items in an instance")
        if set(self.targets) & set(self.negatives):
            raise ContractViolation("targets and negatives overlap")

    @property
    def k(self) -> int:
        return len(self.targets)

    @property
    def n(self) -> int:
        return len(self.negatives)

    @property
    def items(self) -> tuple[int, ...]:
        return self.targets + self.negatives


@dataclass(frozen=True)
class PersonalizedKernel:
    matrix: SmallSymMatrix
    qualities: np.ndarray
    instance: GroundSetInstance
    jitter: float = JITTER

    @property
    def k(self) -> int:
        return self.instance.k

    @property
    def order(self) -> int:
        return self.matrix.order


def predict_quality(user_vec, item_vec) -> float:
    """exp(<user, item>) with the dot product clamped to [-20, 20]."""
    u = np.asarray(user_vec, dtype=np.float64)
    v = np.asarray(item_vec, dtype=np.float64)
    if u.shape != v.shape:
        raise ContractViolation(f"dimension mismatch: {u.shape} vs {v.shape}")
    return math.exp(min(max(float(u @ v), -SCORE_CLAMP), SCORE_CLAMP))


def _check_items(items: np.ndarray, num_items: int):
    bad = items[(items < 0) | (items >= num_items)]
    if bad.size:
        raise KeyError(f"unknown item id {int(bad.ravel()[0])}")


def ground_set_kernels(users, items, embeddings: EmbeddingTable, K: DiversityKernel, jitter: float = JITTER):
    """Batched kernels for users (B,) and ground sets items (B, m).

    Returns (L, L0, q, live, Kg): jittered and jitter-free kernels, qualities,
    the mask of unclamped scores, and the diversity submatrices.
    """
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    _check_items(items, embeddings.item_vecs.shape[0])
    U = embeddings.user_vecs[users]
    X = embeddings.item_vecs[items]
    s = np.einsum("bd,bmd->bm", U, X)
    live = np.abs(s) < SCORE_CLAMP
    q = np.exp(np.clip(s, -SCORE_CLAMP, SCORE_CLAMP))
    Kg = K.gram(items, embeddings.item_vecs)
    L0 = q[:, :, None] * Kg * q[:, None, :]
    L = L0.copy()
    m = items.shape[1]
    L[:, np.arange(m), np.arange(m)] += jitter
    return L, L0, q, live, Kg


def build_personalized_kernel(
    instance: GroundSetInstance, embeddings: EmbeddingTable, K: DiversityKernel, jitter: float = JITTER
) -> PersonalizedKernel:
    """L = Diag(q) K Diag(q) + eps I over the instance's targets then negatives."""
    if not 0 <= instance.user < embeddings.user_vecs.shape[0]:
        raise KeyError(f"unknown user id {instance.user}")
    L, _, q, _, _ = ground_set_kernels([instance.user], [instance.items], embeddings, K, jitter)
    return PersonalizedKernel(SmallSymMatrix(L[0]), q[0], instance, jitter)


@lru_cache(maxsize=64)
def _subsets(ground_size: int, k: int) -> np.ndarray:
    out = np.array(list(combinations(range(ground_size), k)), dtype=np.int64).reshape(-1, k)
    out.setflags(write=False)
    return out


def enumerate_k_subsets(ground_size: int, k: int) -> np.ndarray:
    """All C(ground_size, k) increasing index tuples, lexicographic, as rows."""
    if ground_size > MAX_ENUMERATION:
        raise EnumerationTooLarge(f"refusing to enumerate subsets of a {ground_size}-item ground set (max {MAX_ENUMERATION})")
    if not 0 <= k <= ground_size:
        raise ContractViolation(f"need 0 <= k <= {ground_size}, got {k}")
    return _subsets(ground_size, k)


def subset_row(ground_size: int, subset) -> int:
    """Row of ``subset`` in ``enumerate_k_subsets(ground_size, len(subset))``."""
    subset = [int(x) for x in subset]
    k = len(subset)
    # combinatorial number system, lexicographic order
    row, prev = 0, -1
    for pos, x in enumerate(subset):
        for skip in range(prev + 1, x):
            row += math.comb(ground_size - skip - 1, k - pos - 1)
        prev = x
    return row


def log_normalizer(L: PersonalizedKernel) -> float:
    """log Z_k = log e_k(eigenvalues of L)."""
    return log_esp(L.k, eigenvalues_sym(L.matrix))


def kdpp_log_probability(L: PersonalizedKernel, subset) -> float:
    """log det(L_S) - log Z_k for a k-subset S of ground-set positions."""
    idx = np.asarray(sorted(int(i) for i in subset), dtype=np.int64)
    if idx.size != L.k:
        raise ContractViolation(f"k-DPP assigns probability only to {L.k}-subsets, got {idx.size} items")
    if len(set(idx.tolist())) != idx.size or idx[0] < 0 or idx[-1] >= L.order:
        raise ContractViolation("subset must hold distinct ground-set positions")
    sign, ld = slogdet(L.matrix.entries[np.ix_(idx, idx)])
    if sign <= 0:
        return -math.inf
    return ld - log_normalizer(L)


def subset_log_probabilities(L: PersonalizedKernel) -> np.ndarray:
    """log P(S) for every k-subset, in ``enumerate_k_subsets`` order."""
    subsets = enumerate_k_subsets(L.order, L.k)
    return kernels.subset_logprobs(L.matrix.entries[None], subsets)[0]
