"""Batched k-DPP objective kernels.

For each ground-set kernel L (order m = k+n) these compute the loss and the
matrix ``A = dloss/dL`` by enumerating every k-subset S:

    dloss/dL = sum_S c_S * pad(inv(L_S))

with c_S built from the subset weights w_S = det(L_S) / Z_k. Z_k comes from
the elementary symmetric polynomial of L's eigenvalues, so the enumeration is
a single pass. Callers chain A into embedding gradients.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from . import _backend
from ._backend import njit, prange
from .linalg import (
    JACOBI_MAX_SWEEPS,
    JACOBI_TOL,
    jacobi_eigvals_nb,
    jacobi_eigvals_np,
    log_esp_nb,
    log_esp_np,
    lu_slogdet_inv_nb,
)

P_NEG_CAP = 1.0 - 1e-12


@njit
def _gather(L, subsets, c, out):
    k = subsets.shape[1]
    for i in range(k):
        si = subsets[c, i]
        for j in range(k):
            out[i, j] = L[si, subsets[c, j]]


@njit
def _instance_nb(L, subsets, target, negative, nps, A):
    """Loss and dloss/dL for one ground set. A is written in place.
    Returns (loss, log p(target), log p(negative)); NaN loss marks a skip."""
    C, k = subsets.shape
    nan = np.nan
    w, off, sweeps = jacobi_eigvals_nb(L, JACOBI_TOL, JACOBI_MAX_SWEEPS)
    if sweeps < 0:
        return nan, nan, nan
    logz = log_esp_nb(k, w)
    if not np.isfinite(logz):
        return nan, nan, nan
    sub = np.empty((k, k))

    lp_neg = nan
    r = 0.0
    extra = 0.0
    if negative >= 0:
        _gather(L, subsets, negative, sub)
        sign, la, _ = lu_slogdet_inv_nb(sub, False)
        if sign <= 0.0:
            return nan, nan, nan
        lp_neg = la - logz
        if nps:
            p = math.exp(lp_neg)
            if p > P_NEG_CAP:
                p = P_NEG_CAP
            r = p / (1.0 - p)
            extra = -math.log1p(-p)

    lp_target = nan
    for c in range(C):
        _gather(L, subsets, c, sub)
        sign, la, inv = lu_slogdet_inv_nb(sub, True)
        if sign <= 0.0:
            return nan, nan, nan
        coef = (1.0 - r) * math.exp(la - logz)
        if c == target:
            lp_target = la - logz
            coef -= 1.0
        if nps and c == negative:
            coef += r
        for i in range(k):
            si = subsets[c, i]
            for j in range(k):
                A[si, subsets[c, j]] += coef * inv[i, j]
    return -lp_target + extra, lp_target, lp_neg


@njit(parallel=True)
def kdpp_batch_nb(Ls, subsets, target, negative, nps):
    B, m = Ls.shape[0], Ls.shape[1]
    loss = np.empty(B)
    lpt = np.empty(B)
    lpn = np.empty(B)
    A = np.zeros((B, m, m))
    for b in prange(B):
        a, t, n = _instance_nb(Ls[b], subsets, target, negative, nps, A[b])
        loss[b] = a
        lpt[b] = t
        lpn[b] = n
    return loss, lpt, lpn, A


@njit(parallel=True)
def subset_logprobs_nb(Ls, subsets):
    B = Ls.shape[0]
    C, k = subsets.shape
    out = np.empty((B, C))
    for b in prange(B):
        w, off, sweeps = jacobi_eigvals_nb(Ls[b], JACOBI_TOL, JACOBI_MAX_SWEEPS)
        logz = log_esp_nb(k, w) if sweeps >= 0 else np.nan
        sub = np.empty((k, k))
        for c in range(C):
            _gather(Ls[b], subsets, c, sub)
            sign, la, _ = lu_slogdet_inv_nb(sub, False)
            out[b, c] = la - logz if sign > 0.0 else -np.inf
    return out


# ---------------------------------------------------------------------------
# numpy twin


@lru_cache(maxsize=32)
def _flat_index(subsets_bytes: bytes, C: int, k: int, m: int) -> np.ndarray:
    subsets = np.frombuffer(subsets_bytes, dtype=np.int64).reshape(C, k)
    return (subsets[:, :, None] * m + subsets[:, None, :]).ravel()


def _subset_slogdets_np(Ls, subsets, want_inv):
    subs = Ls[:, subsets[:, :, None], subsets[:, None, :]]
    sign, lds = np.linalg.slogdet(subs)
    invs = None
    if want_inv:
        invs = np.zeros_like(subs)
        good = np.all(sign > 0, axis=1)
        if good.any():
            invs[good] = np.linalg.inv(subs[good])
    return sign, lds, invs


def kdpp_batch_np(Ls, subsets, target, negative, nps):
    Ls = np.asarray(Ls, dtype=np.float64)
    B, m = Ls.shape[0], Ls.shape[1]
    C, k = subsets.shape
    w, _, sweeps = jacobi_eigvals_np(Ls)
    logz = log_esp_np(k, w)
    sign, lds, invs = _subset_slogdets_np(Ls, subsets, True)
    ok = np.all(sign > 0, axis=1) & np.isfinite(logz) & (sweeps >= 0)
    with np.errstate(invalid="ignore"):  # singular rows (-inf - -inf) are masked by ok
        logp = lds - logz[:, None]
    lpt = logp[:, target]
    lpn = logp[:, negative] if negative >= 0 else np.full(B, np.nan)
    r = np.zeros(B)
    extra = np.zeros(B)
    if nps:
        p = np.minimum(np.exp(lpn), P_NEG_CAP)
        r = p / (1.0 - p)
        extra = -np.log1p(-p)
    with np.errstate(over="ignore", invalid="ignore"):
        coef = (1.0 - r)[:, None] * np.exp(logp)
    coef[:, target] -= 1.0
    if nps:
        coef[:, negative] += r
    coef[~ok] = 0.0
    vals = coef[:, :, None, None] * invs
    flat = _flat_index(np.ascontiguousarray(subsets, dtype=np.int64).tobytes(), C, k, m)
    idx = (np.arange(B)[:, None] * (m * m) + flat[None, :]).ravel()
    A = np.bincount(idx, weights=vals.ravel(), minlength=B * m * m).reshape(B, m, m)
    loss = np.where(ok, -lpt + extra, np.nan)
    return loss, np.where(ok, lpt, np.nan), np.where(ok, lpn, np.nan), A


def subset_logprobs_np(Ls, subsets):
    Ls = np.asarray(Ls, dtype=np.float64)
    k = subsets.shape[1]
    w, _, sweeps = jacobi_eigvals_np(Ls)
    logz = np.where(sweeps >= 0, log_esp_np(k, w), np.nan)
    sign, lds, _ = _subset_slogdets_np(Ls, subsets, False)
    return np.where(sign > 0, lds - logz[:, None], -np.inf)


# ---------------------------------------------------------------------------
# dispatch


def kdpp_batch(Ls, subsets, target: int, negative: int = -1, nps: bool = False):
    """Loss, log p(target), log p(negative) and dloss/dL for a batch of kernels.

    ``negative`` is the row of the all-negative subset in ``subsets`` (or -1).
    Instances whose subsets are singular come back with NaN loss and zero A.
    """
    Ls = np.ascontiguousarray(Ls, dtype=np.float64)
    subsets = np.ascontiguousarray(subsets, dtype=np.int64)
    if _backend.USE_NUMBA:
        loss, lpt, lpn, A = kdpp_batch_nb(Ls, subsets, int(target), int(negative), bool(nps))
        bad = ~np.isfinite(loss)
        if bad.any():
            A[bad] = 0.0
        return loss, lpt, lpn, A
    return kdpp_batch_np(Ls, subsets, int(target), int(negative), bool(nps))


def subset_logprobs(Ls, subsets) -> np.ndarray:
    """log P(S) for every row S of ``subsets``, per kernel: shape (B, C)."""
    Ls = np.ascontiguousarray(Ls, dtype=np.float64)
    subsets = np.ascontiguousarray(subsets, dtype=np.int64)
    if _backend.USE_NUMBA:
        return subset_logprobs_nb(Ls, subsets)
    return subset_logprobs_np(Ls, subsets)
