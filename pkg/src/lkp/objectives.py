"""Losses and gradients: LkP-PS, LkP-NPS, BPR and BCE.

All losses are negated log-objectives (to be minimized). The LkP gradients
come from ``kernels.kdpp_batch``, which returns A = dloss/dL; the chain rule
to embeddings is derived from L_ij = q_i K_ij q_j with q_i = exp(<e_u, e_i>):

    dloss/ds_i   = 2 * sum_j A_ij * L0_ij          (s_i = <e_u, e_i>)
    dloss/dK_ij  = A_ij * q_i * q_j                (gaussian kernel only)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .dpp import JITTER, GroundSetInstance, enumerate_k_subsets, ground_set_kernels
from .errors import ContractViolation

MAX_GROUND_SET = 14


@dataclass
class GradientBundle:
    user_grad: dict[int, np.ndarray]
    item_grads: dict[int, np.ndarray]
    loss: float


@dataclass
class BatchGradient:
    """Per-instance results for a batch of B instances (rows with ok=False
    were skipped and carry zero gradients)."""

    users: np.ndarray
    items: np.ndarray          # (B, m)
    loss: np.ndarray           # (B,)
    ok: np.ndarray             # (B,)
    user_grad: np.ndarray      # (B, d)
    item_grad: np.ndarray      # (B, m, d)
    logp_target: np.ndarray | None = None
    logp_negative: np.ndarray | None = None

    @property
    def skipped(self) -> int:
        return int((~self.ok).sum())


def negative_row(k: int, n: int) -> int:
    """Row of the all-negative subset in ``enumerate_k_subsets(k+n, k)``;
    it is unique (and last) only when n == k."""
    if n != k:
        return -1
    return len(enumerate_k_subsets(2 * k, k)) - 1


def lkp_batch(users, items, k: int, embeddings, K, *, nps: bool, jitter: float = JITTER) -> BatchGradient:
    """Batched LkP objective over ground sets ``items`` (targets first)."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    m = items.shape[1]
    n = m - k
    if m > MAX_GROUND_SET:
        raise ContractViolation(f"ground set of {m} exceeds the enumeration guard ({MAX_GROUND_SET})")
    if nps and n != k:
        raise ContractViolation(f"LkP-NPS needs n == k (got k={k}, n={n})")
    subsets = enumerate_k_subsets(m, k)
    L, L0, q, live, Kg = ground_set_kernels(users, items, embeddings, K, jitter)
    loss, lpt, lpn, A = kernels.kdpp_batch(L, subsets, 0, negative_row(k, n), nps)

    ok = np.isfinite(loss)
    ds = 2.0 * np.sum(A * L0, axis=-1) * live
    U = embeddings.user_vecs[users]
    X = embeddings.item_vecs[items]
    user_grad = np.einsum("bm,bmd->bd", ds, X)
    item_grad = ds[:, :, None] * U[:, None, :]
    if K.mode == "gaussian":
        W = A * (q[:, :, None] * q[:, None, :]) * Kg
        item_grad -= (2.0 / K.sigma**2) * (W.sum(axis=-1)[:, :, None] * X - W @ X)
    user_grad[~ok] = 0.0
    item_grad[~ok] = 0.0
    return BatchGradient(users, items, loss, ok, user_grad, item_grad, lpt, lpn)


def _bundle(batch: BatchGradient) -> GradientBundle:
    items = batch.items[0]
    return GradientBundle(
        user_grad={int(batch.users[0]): batch.user_grad[0]},
        item_grads={int(i): batch.item_grad[0, j] for j, i in enumerate(items)},
        loss=float(batch.loss[0]),
    )


def lkp_ps(instance: GroundSetInstance, embeddings, K, jitter: float = JITTER) -> GradientBundle:
    """-log P(targets) under the instance's k-DPP, with gradients."""
    b = lkp_batch([instance.user], [instance.items], instance.k, embeddings, K, nps=False, jitter=jitter)
    return _bundle(b)


def lkp_nps(instance: GroundSetInstance, embeddings, K, jitter: float = JITTER) -> GradientBundle:
    """-[log P(targets) + log(1 - P(negatives))]; requires n == k."""
    if instance.n != instance.k:
        raise ContractViolation(f"LkP-NPS needs n == k (got k={instance.k}, n={instance.n})")
    b = lkp_batch([instance.user], [instance.items], instance.k, embeddings, K, nps=True, jitter=jitter)
    return _bundle(b)


# ---------------------------------------------------------------------------
# baselines


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def bpr_batch(users, pos, neg, embeddings):
    """-log sigmoid(y_pos - y_neg) with y = dot product."""
    U = embeddings.user_vecs[users]
    P = embeddings.item_vecs[pos]
    N = embeddings.item_vecs[neg]
    x = np.einsum("bd,bd->b", U, P - N)
    loss = np.logaddexp(0.0, -x)
    g = -_sigmoid(-x)[:, None]
    return loss, g * (P - N), g * U, -g * U


def bce_batch(users, items, labels, embeddings):
    """Binary cross entropy on sigmoid(dot product)."""
    U = embeddings.user_vecs[users]
    X = embeddings.item_vecs[items]
    y = np.einsum("bd,bd->b", U, X)
    labels = np.asarray(labels, dtype=np.float64)
    loss = np.logaddexp(0.0, y) - labels * y
    g = (_sigmoid(y) - labels)[:, None]
    return loss, g * X, g * U


def bpr(user: int, pos_item: int, neg_item: int, embeddings) -> GradientBundle:
    if pos_item == neg_item:
        raise ContractViolation("BPR needs distinct positive and negative items")
    loss, gu, gp, gn = bpr_batch(np.array([user]), np.array([pos_item]), np.array([neg_item]), embeddings)
    return GradientBundle({int(user): gu[0]}, {int(pos_item): gp[0], int(neg_item): gn[0]}, float(loss[0]))


def bce(user: int, item: int, label: int, embeddings) -> GradientBundle:
    if label not in (0, 1):
        raise ContractViolation("label must be 0 or 1")
    loss, gu, gi = bce_batch(np.array([user]), np.array([item]), np.array([label]), embeddings)
    return GradientBundle({int(user): gu[0]}, {int(item): gi[0]}, float(loss[0]))
