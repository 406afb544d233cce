"""Dense symmetric linear algebra for small kernels.

Everything here targets matrices of order at most 16: the personalized k-DPP
kernels over a (k+n)-item ground set and their principal submatrices.

* eigenvalues: cyclic Jacobi rotations
* determinants / inverses: LU with partial pivoting and sign tracking
* elementary symmetric polynomials: the O(m k) recursion
  ``e[l, j] = e[l, j-1] + lam[j] * e[l-1, j-1]``
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _backend
from ._backend import njit
from .errors import ContractViolation, ConvergenceError

MAX_ORDER = 16
JACOBI_TOL = 1e-10
JACOBI_MAX_SWEEPS = 100
# log-domain rescaling kicks in outside this band
_RESCALE_HI = 1e8


class SmallSymMatrix:
    """A symmetric float64 matrix of order 1..16.

    Construction symmetrizes the input (``(A + A.T) / 2``, which is exactly
    symmetric) after checking that it was symmetric to rounding error.
    """

    __slots__ = ("_a",)

    def __init__(self, entries, *, atol: float = 1e-12):
        a = np.array(entries, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ContractViolation(f"expected a square matrix, got shape {a.shape}")
        n = a.shape[0]
        if not 1 <= n <= MAX_ORDER:
            raise ContractViolation(f"order must be in [1, {MAX_ORDER}], got {n}")
        scale = max(1.0, float(np.max(np.abs(a))))
        if np.max(np.abs(a - a.T)) > atol * scale:
            raise ContractViolation("matrix is not symmetric")
        a = 0.5 * (a + a.T)
        a.setflags(write=False)
        self._a = a

    @property
    def order(self) -> int:
        return self._a.shape[0]

    @property
    def entries(self) -> np.ndarray:
        return self._a

    def __array__(self, dtype=None, copy=None):
        return self._a if dtype is None else self._a.astype(dtype)

    def __repr__(self):
        return f"SmallSymMatrix(order={self.order})"


@dataclass(frozen=True)
class EspTable:
    """Recursion grid ``e[l, j] = e_l(lam_1..lam_j)``."""

    k: int
    m: int
    e: np.ndarray

    @property
    def value(self) -> float:
        return float(self.e[self.k, self.m])


def _as_array(M) -> np.ndarray:
    if isinstance(M, SmallSymMatrix):
        return M.entries
    return np.asarray(M, dtype=np.float64)


# ---------------------------------------------------------------------------
# numba kernels


@njit
def jacobi_eigvals_nb(a, tol, max_sweeps):
    """Cyclic Jacobi. Returns (eigenvalues, off-diagonal residual, sweeps);
    sweeps is -1 when the limit was reached without convergence."""
    n = a.shape[0]
    a = a.copy()
    norm = 0.0
    for i in range(n):
        for j in range(n):
            norm += a[i, j] * a[i, j]
    thresh = tol * math.sqrt(norm)
    off = 0.0
    for sweep in range(max_sweeps + 1):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off += a[p, q] * a[p, q]
        off = math.sqrt(2.0 * off)
        if off <= thresh:
            w = np.empty(n)
            for i in range(n):
                w[i] = a[i, i]
            return w, off, sweep
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                a[p, p] -= t * apq
                a[q, q] += t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for r in range(n):
                    if r != p and r != q:
                        arp = a[r, p]
                        arq = a[r, q]
                        a[r, p] = c * arp - s * arq
                        a[p, r] = a[r, p]
                        a[r, q] = s * arp + c * arq
                        a[q, r] = a[r, q]
    w = np.empty(n)
    for i in range(n):
        w[i] = a[i, i]
    return w, off, -1


@njit
def lu_slogdet_inv_nb(a, want_inv):
    """Partial-pivot LU. Returns (sign, log|det|, inverse); a singular
    matrix gives sign 0, -inf and a zero inverse."""
    n = a.shape[0]
    lu = a.copy()
    perm = np.arange(n)
    inv = np.zeros((n, n))
    sign = 1.0
    logabs = 0.0
    for j in range(n):
        piv = j
        mx = abs(lu[j, j])
        for i in range(j + 1, n):
            v = abs(lu[i, j])
            if v > mx:
                mx = v
                piv = i
        if mx == 0.0:
            return 0.0, -np.inf, inv
        if piv != j:
            for c in range(n):
                tmp = lu[j, c]
                lu[j, c] = lu[piv, c]
                lu[piv, c] = tmp
            tp = perm[j]
            perm[j] = perm[piv]
            perm[piv] = tp
            sign = -sign
        d = lu[j, j]
        if d < 0.0:
            sign = -sign
        logabs += math.log(abs(d))
        for i in range(j + 1, n):
            f = lu[i, j] / d
            lu[i, j] = f
            for c in range(j + 1, n):
                lu[i, c] -= f * lu[j, c]
    if want_inv:
        y = np.empty(n)
        for col in range(n):
            for i in range(n):
                acc = 1.0 if perm[i] == col else 0.0
                for m in range(i):
                    acc -= lu[i, m] * y[m]
                y[i] = acc
            for i in range(n - 1, -1, -1):
                acc = y[i]
                for m in range(i + 1, n):
                    acc -= lu[i, m] * inv[m, col]
                inv[i, col] = acc / lu[i, i]
    return sign, logabs, inv


@njit
def esp_table_nb(k, lam):
    m = lam.shape[0]
    e = np.zeros((k + 1, m + 1))
    for j in range(m + 1):
        e[0, j] = 1.0
    for l in range(1, k + 1):
        for j in range(1, m + 1):
            e[l, j] = e[l, j - 1] + lam[j - 1] * e[l - 1, j - 1]
    return e


@njit
def log_esp_nb(k, lam):
    m = lam.shape[0]
    top = 0.0
    for j in range(m):
        if lam[j] > top:
            top = lam[j]
    scale = top if top > _RESCALE_HI else 1.0
    # single-row rolling recursion
    row = np.zeros(k + 1)
    row[0] = 1.0
    for j in range(m):
        x = lam[j] / scale
        for l in range(min(k, j + 1), 0, -1):
            row[l] += x * row[l - 1]
    val = row[k]
    if val <= 0.0:
        return -np.inf
    return math.log(val) + k * math.log(scale)


# ---------------------------------------------------------------------------
# numpy kernels (batched over a leading axis)


def jacobi_eigvals_np(a: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS):
    """Batched cyclic Jacobi over ``a`` of shape (B, n, n).

    Returns (eigenvalues (B, n), residuals (B,), sweeps); sweeps is -1 if any
    matrix failed to converge.
    """
    a = np.array(a, dtype=np.float64, copy=True)
    n = a.shape[-1]
    thresh = tol * np.sqrt(np.einsum("bij,bij->b", a, a))
    iu = np.triu_indices(n, 1)
    off = np.zeros(a.shape[0])
    for sweep in range(max_sweeps + 1):
        off = np.sqrt(2.0 * np.sum(a[:, iu[0], iu[1]] ** 2, axis=1))
        if np.all(off <= thresh):
            return np.diagonal(a, axis1=1, axis2=2).copy(), off, sweep
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[:, p, q]
                live = apq != 0.0
                if not live.any():
                    continue
                safe = np.where(live, apq, 1.0)
                with np.errstate(over="ignore"):
                    theta = (a[:, q, q] - a[:, p, p]) / (2.0 * safe)
                    t = np.where(theta >= 0.0, 1.0, -1.0) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
                t = np.where(live, t, 0.0)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                app = a[:, p, p] - t * apq
                aqq = a[:, q, q] + t * apq
                colp = a[:, :, p].copy()
                colq = a[:, :, q].copy()
                a[:, :, p] = c[:, None] * colp - s[:, None] * colq
                a[:, :, q] = s[:, None] * colp + c[:, None] * colq
                a[:, p, :] = a[:, :, p]
                a[:, q, :] = a[:, :, q]
                a[:, p, p] = app
                a[:, q, q] = aqq
                a[:, p, q] = 0.0
                a[:, q, p] = 0.0
    return np.diagonal(a, axis1=1, axis2=2).copy(), off, -1


def esp_table_np(k: int, lam: np.ndarray) -> np.ndarray:
    """Batched recursion grid: lam (B, m) -> e (B, k+1, m+1)."""
    lam = np.atleast_2d(np.asarray(lam, dtype=np.float64))
    b, m = lam.shape
    e = np.zeros((b, k + 1, m + 1))
    e[:, 0, :] = 1.0
    for j in range(1, m + 1):
        e[:, 1:, j] = e[:, 1:, j - 1] + lam[:, j - 1 : j] * e[:, :-1, j - 1]
    return e


def log_esp_np(k: int, lam: np.ndarray) -> np.ndarray:
    lam = np.atleast_2d(np.asarray(lam, dtype=np.float64))
    top = lam.max(axis=1)
    scale = np.where(top > _RESCALE_HI, top, 1.0)
    val = esp_table_np(k, lam / scale[:, None])[:, k, -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(val) + k * np.log(scale)
    return np.where(val > 0.0, out, -np.inf)


# ---------------------------------------------------------------------------
# public operations


def eigenvalues_sym(M, *, max_sweeps: int = JACOBI_MAX_SWEEPS) -> np.ndarray:
    """Eigenvalues of a small symmetric matrix, sorted descending.

    Raises ConvergenceError carrying the off-diagonal residual if
    ``max_sweeps`` Jacobi sweeps do not bring the off-diagonal norm below
    1e-10 * ||M||_F.
    """
    if not isinstance(M, SmallSymMatrix):
        M = SmallSymMatrix(M)
    a = M.entries
    if _backend.USE_NUMBA:
        w, off, sweeps = jacobi_eigvals_nb(a, JACOBI_TOL, max_sweeps)
    else:
        w, off, sweeps = jacobi_eigvals_np(a[None], JACOBI_TOL, max_sweeps)
        w, off = w[0], off[0]
    if sweeps < 0:
        raise ConvergenceError(float(off), max_sweeps)
    return np.sort(w)[::-1].copy()


def slogdet(a) -> tuple[float, float]:
    """(sign, log|det|) of a square matrix via pivoted LU."""
    a = np.ascontiguousarray(_as_array(a), dtype=np.float64)
    if a.shape[0] == 0:
        return 1.0, 0.0
    if _backend.USE_NUMBA:
        sign, logabs, _ = lu_slogdet_inv_nb(a, False)
        return float(sign), float(logabs)
    sign, logabs = np.linalg.slogdet(a)
    return float(sign), float(logabs)


def inv(a) -> np.ndarray:
    a = np.ascontiguousarray(_as_array(a), dtype=np.float64)
    if _backend.USE_NUMBA:
        sign, _, out = lu_slogdet_inv_nb(a, True)
        if sign == 0.0:
            raise np.linalg.LinAlgError("singular matrix")
        return out
    return np.linalg.inv(a)


def det_principal_submatrix(M, idx) -> float:
    """Determinant of the principal submatrix on ``idx`` (1.0 for ``[]``)."""
    a = _as_array(M)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        return 1.0
    if np.any(np.diff(idx) <= 0) or idx[0] < 0 or idx[-1] >= a.shape[0]:
        raise ContractViolation(f"index list must be strictly increasing within [0, {a.shape[0]})")
    sign, logabs = slogdet(a[np.ix_(idx, idx)])
    return sign * math.exp(logabs) if sign != 0.0 else 0.0


def esp_table(k: int, lambdas) -> EspTable:
    lam = np.ascontiguousarray(lambdas, dtype=np.float64).ravel()
    if not 0 <= k <= lam.size:
        raise ContractViolation(f"need 0 <= k <= {lam.size}, got k={k}")
    if _backend.USE_NUMBA:
        e = esp_table_nb(k, lam)
    else:
        e = esp_table_np(k, lam[None])[0]
    return EspTable(k=k, m=lam.size, e=e)


def esp(k: int, lambdas) -> float:
    """Elementary symmetric polynomial e_k of ``lambdas``."""
    return esp_table(k, lambdas).value


def log_esp(k: int, lambdas) -> float:
    """log e_k(lambdas), rescaling by the top value when it exceeds 1e8."""
    lam = np.ascontiguousarray(lambdas, dtype=np.float64).ravel()
    if not 0 <= k <= lam.size:
        raise ContractViolation(f"need 0 <= k <= {lam.size}, got k={k}")
    if _backend.USE_NUMBA:
        return float(log_esp_nb(k, lam))
    return float(log_esp_np(k, lam[None])[0])
