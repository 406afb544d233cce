"""Slow, independent reference implementations used as test oracles."""

from itertools import combinations

import numpy as np


def cofactor_det(M):
    M = np.asarray(M, dtype=np.float64)
    n = M.shape[0]
    if n == 0:
        return 1.0
    if n == 1:
        return float(M[0, 0])
    total = 0.0
    for j in range(n):
        minor = np.delete(np.delete(M, 0, axis=0), j, axis=1)
        total += (-1) ** j * M[0, j] * cofactor_det(minor)
    return total


def count_below(M, x):
    """Number of eigenvalues below x: negative pivots of LDL^T(M - xI)."""
    A = np.asarray(M, dtype=np.float64) - x * np.eye(len(M))
    n = len(A)
    count = 0
    A = A.copy()
    for i in range(n):
        piv = A[i, i]
        if piv == 0.0:
            piv = -1e-300
        if piv < 0:
            count += 1
        if i + 1 < n:
            col = A[i + 1 :, i] / piv
            A[i + 1 :, i + 1 :] -= np.outer(col, A[i, i + 1 :])
    return count


def bisection_eigenvalues(M, tol=1e-13):
    """All eigenvalues, descending, by bisection on the inertia count."""
    M = np.asarray(M, dtype=np.float64)
    n = len(M)
    radius = np.max(np.sum(np.abs(M), axis=1))
    out = []
    for idx in range(n):
        # the idx-th smallest eigenvalue: smallest x with count_below(x) > idx
        lo, hi = -radius - 1.0, radius + 1.0
        while hi - lo > tol * max(1.0, abs(hi)):
            mid = 0.5 * (lo + hi)
            if count_below(M, mid) > idx:
                hi = mid
            else:
                lo = mid
        out.append(0.5 * (lo + hi))
    return np.array(out[::-1])


def enumerated_esp(lam, k):
    return sum(np.prod(c) for c in combinations(list(lam), k)) if k else 1.0


def enumerated_normalizer(L, k):
    return sum(cofactor_det(L[np.ix_(s, s)]) for s in combinations(range(len(L)), k))


def enumerated_probabilities(L, k):
    dets = np.array([np.linalg.det(L[np.ix_(s, s)]) for s in combinations(range(len(L)), k)])
    return dets / dets.sum()
