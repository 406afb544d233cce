"""Self-checks behind ``lkp verify``: every fast path against a slow,
independent route (enumeration, numpy LAPACK, central differences)."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import objectives
from .diversity import DiversePairSet, DiversityKernel, kernel_objective, kernel_objective_grad
from .dpp import GroundSetInstance, build_personalized_kernel, enumerate_k_subsets, ground_set_kernels
from .evaluation import f_score
from .linalg import eigenvalues_sym, esp, log_esp
from .model import EmbeddingTable
from .rng import rng_for

FD_STEP = 1e-5

# (recall, ndcg, cc, reported F) at cutoff 5
F_TABLE_ROWS = {
    "ML NPS": (0.0862, 0.0950, 0.3326, 0.1424),
    "ML PR": (0.0831, 0.0895, 0.3417, 0.1378),
    "Beauty NPS": (0.0868, 0.0878, 0.0578, 0.0696),
    "Beauty PR": (0.0788, 0.0808, 0.0579, 0.0671),
}


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.2f}s)"


def random_psd(rng, m: int, rank: int | None = None) -> np.ndarray:
    B = rng.normal(size=(m, rank or m))
    return B @ B.T + 1e-3 * np.eye(m)


def random_embeddings(rng, num_users: int, num_items: int, d: int, scale: float = 0.3) -> EmbeddingTable:
    return EmbeddingTable(rng.normal(0, scale, (num_users, d)), rng.normal(0, scale, (num_items, d)))


def random_instance(rng, num_users: int, num_items: int, k: int, n: int) -> GroundSetInstance:
    items = rng.choice(num_items, size=k + n, replace=False)
    return GroundSetInstance(int(rng.integers(num_users)), tuple(items[:k]), tuple(items[k:]))


def enumerated_normalizer(L: np.ndarray, k: int) -> float:
    return sum(np.linalg.det(L[np.ix_(s, s)]) for s in combinations(range(L.shape[0]), k))


def relative_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def central_difference(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Gradient of scalar ``f`` at ``x`` (perturbed in place, restored)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


# ---------------------------------------------------------------------------
# checks


def check_esp_vs_enumeration(trials: int = 200, seed: int = 0) -> tuple[float, int]:
    rng = rng_for(seed, "oracle-esp")
    worst = 0.0
    for _ in range(trials):
        m = int(rng.integers(4, 13))
        k = int(rng.integers(1, m + 1))
        L = random_psd(rng, m, rank=int(rng.integers(k, m + 1)))
        worst = max(worst, relative_error(esp(k, eigenvalues_sym(L)), enumerated_normalizer(L, k)))
    return worst, trials


def check_eigenvalues(trials: int = 100, seed: int = 0) -> float:
    rng = rng_for(seed, "oracle-eig")
    worst = 0.0
    for _ in range(trials):
        M = random_psd(rng, int(rng.integers(1, 17)))
        ref = np.sort(np.linalg.eigvalsh(M))[::-1]
        worst = max(worst, float(np.max(np.abs(eigenvalues_sym(M) - ref)) / np.max(np.abs(ref))))
    return worst


def check_normalization(trials: int = 100, seed: int = 0) -> tuple[float, float]:
    """Worst |sum P - 1| over random kernels at k=n=5, and the worst deviation
    of the uniform (zero embeddings, K = I) case from 1/252."""
    from .dpp import subset_log_probabilities

    rng = rng_for(seed, "oracle-norm")
    worst = 0.0
    for _ in range(trials):
        emb = random_embeddings(rng, 3, 40, 8)
        K = DiversityKernel("pretrained", V=rng.normal(size=(40, 12)))
        pk = build_personalized_kernel(random_instance(rng, 3, 40, 5, 5), emb, K)
        worst = max(worst, abs(float(np.exp(subset_log_probabilities(pk)).sum()) - 1.0))
    zero = EmbeddingTable(np.zeros((1, 4)), np.zeros((10, 4)))
    pk = build_personalized_kernel(GroundSetInstance(0, (0, 1, 2, 3, 4), (5, 6, 7, 8, 9)), zero, DiversityKernel.identity(10))
    uniform = float(np.max(np.abs(np.exp(subset_log_probabilities(pk)) - 1 / 252)))
    return worst, uniform


def lkp_fd_error(rng, *, nps: bool, mode: str, k: int = 3, n: int = 3, d: int = 4) -> float:
    """Analytic vs central-difference gradient for one random LkP instance,
    over the user row and every ground-set item row."""
    num_users, num_items = 3, 12
    emb = random_embeddings(rng, num_users, num_items, d, scale=0.5)
    if mode == "pretrained":
        K = DiversityKernel("pretrained", V=rng.normal(0, 0.6, (num_items, 6)))
    else:
        K = DiversityKernel.gaussian(float(rng.uniform(0.6, 1.5)))
    inst = random_instance(rng, num_users, num_items, k, n)
    fn = objectives.lkp_nps if nps else objectives.lkp_ps
    g = fn(inst, emb, K)

    def loss():
        return fn(inst, emb, K).loss

    errs = []
    fd_u = central_difference(loss, emb.user_vecs[inst.user : inst.user + 1])
    errs.append((g.user_grad[inst.user], fd_u[0]))
    items = list(inst.items)
    an_items = np.stack([g.item_grads[i] for i in items])
    fd_items = np.stack([central_difference(loss, emb.item_vecs[i : i + 1])[0] for i in items])
    errs.append((an_items, fd_items))
    a = np.concatenate([x.ravel() for x, _ in errs])
    f = np.concatenate([y.ravel() for _, y in errs])
    return relative_error(a, f)


def pairwise_fd_error(rng, which: str, d: int = 6) -> float:
    emb = random_embeddings(rng, 4, 10, d, scale=0.7)
    u = int(rng.integers(4))
    i, j = (int(x) for x in rng.choice(10, 2, replace=False))
    if which == "bpr":
        g = objectives.bpr(u, i, j, emb)
        loss = lambda: objectives.bpr(u, i, j, emb).loss  # noqa: E731
        rows = [(emb.user_vecs, u, g.user_grad[u]), (emb.item_vecs, i, g.item_grads[i]), (emb.item_vecs, j, g.item_grads[j])]
    else:
        label = int(rng.integers(2))
        g = objectives.bce(u, i, label, emb)
        loss = lambda: objectives.bce(u, i, label, emb).loss  # noqa: E731
        rows = [(emb.user_vecs, u, g.user_grad[u]), (emb.item_vecs, i, g.item_grads[i])]
    a = np.concatenate([an for _, _, an in rows])
    f = np.concatenate([central_difference(loss, tab[r : r + 1])[0] for tab, r, _ in rows])
    return relative_error(a, f)


def kernel_objective_fd_error(rng, num_items: int = 12, rank: int = 6, set_size: int = 3) -> float:
    plus = np.stack([rng.choice(num_items, set_size, replace=False) for _ in range(4)])
    seen = {frozenset(p.tolist()) for p in plus}
    minus = []
    while len(minus) < 4:
        m = rng.choice(num_items, set_size, replace=False)
        if frozenset(m.tolist()) not in seen:  # identical sets cancel exactly
            minus.append(m)
    pairs = DiversePairSet(plus, np.stack(minus), set_size)
    V = rng.normal(0, 0.5, (num_items, rank))
    row = int(plus[0, 0])
    a = kernel_objective_grad(V, pairs)[row]
    f = central_difference(lambda: kernel_objective(V, pairs), V[row : row + 1])[0]
    return relative_error(a, f)


def check_gradients(instances: int = 20, seed: int = 0) -> dict[str, float]:
    rng = rng_for(seed, "oracle-grad")
    out = {
        "lkp_ps/pretrained": 0.0,
        "lkp_ps/gaussian": 0.0,
        "lkp_nps/pretrained": 0.0,
        "lkp_nps/gaussian": 0.0,
        "bpr": 0.0,
        "bce": 0.0,
        "kernel_objective": 0.0,
    }
    for _ in range(instances):
        for nps in (False, True):
            for mode in ("pretrained", "gaussian"):
                key = f"{'lkp_nps' if nps else 'lkp_ps'}/{mode}"
                out[key] = max(out[key], lkp_fd_error(rng, nps=nps, mode=mode))
        out["bpr"] = max(out["bpr"], pairwise_fd_error(rng, "bpr"))
        out["bce"] = max(out["bce"], pairwise_fd_error(rng, "bce"))
        out["kernel_objective"] = max(out["kernel_objective"], kernel_objective_fd_error(rng))
    return out


def check_logdet_decomposition(trials: int = 100, seed: int = 0) -> float:
    """log det(L_S) = sum 2 s_i + log det(K_S) with jitter off."""
    rng = rng_for(seed, "oracle-decomp")
    worst = 0.0
    for _ in range(trials):
        emb = random_embeddings(rng, 2, 20, 6, scale=0.5)
        K = DiversityKernel("pretrained", V=rng.normal(size=(20, 10)))
        k = int(rng.integers(2, 6))
        items = rng.choice(20, size=2 * k, replace=False)
        u = int(rng.integers(2))
        L, *_ = ground_set_kernels([u], [items], emb, K, jitter=0.0)
        S = np.sort(rng.choice(2 * k, size=k, replace=False))
        _, lhs = np.linalg.slogdet(L[0][np.ix_(S, S)])
        s = emb.item_vecs[items[S]] @ emb.user_vecs[u]
        _, lk = np.linalg.slogdet(K.gram(items[S]))
        worst = max(worst, abs(lhs - (2 * s.sum() + lk)))
    return worst


def check_f_metric() -> dict[str, float]:
    return {name: abs(f_score(r, nd, cc) - ref) for name, (r, nd, cc, ref) in F_TABLE_ROWS.items()}


def check_log_esp(trials: int = 50, seed: int = 0) -> float:
    rng = rng_for(seed, "oracle-logesp")
    worst = 0.0
    for _ in range(trials):
        lam = rng.uniform(0, 3, size=int(rng.integers(2, 13)))
        k = int(rng.integers(1, lam.size + 1))
        ref = math.log(sum(math.prod(c) for c in combinations(lam.tolist(), k)))
        worst = max(worst, abs(log_esp(k, lam) - ref))
    return worst


def check_enumeration_order() -> bool:
    rows = enumerate_k_subsets(6, 3)
    return [tuple(r) for r in rows.tolist()] == list(combinations(range(6), 3))


def run_all(seed: int = 0) -> list[CheckResult]:
    """Run every oracle; each result carries its own tolerance verdict."""
    results = []

    def timed(name, fn, verdict):
        t0 = time.perf_counter()
        try:
            value = fn()
            ok, detail = verdict(value)
        except Exception as exc:  # a crash is a failed check, not an aborted suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))

    timed("eigenvalues vs LAPACK", lambda: check_eigenvalues(seed=seed),
          lambda w: (w < 1e-9, f"max rel err {w:.2e}"))
    timed("esp vs enumerated normalizer", lambda: check_esp_vs_enumeration(seed=seed),
          lambda r: (r[0] < 1e-8, f"max rel err {r[0]:.2e} over {r[1]} kernels"))
    timed("log esp vs brute force", lambda: check_log_esp(seed=seed),
          lambda w: (w < 1e-9, f"max abs err {w:.2e}"))
    timed("subset enumeration order", check_enumeration_order, lambda ok: (ok, "lexicographic"))
    timed("k-DPP normalization", lambda: check_normalization(seed=seed),
          lambda r: (r[0] < 1e-8 and r[1] < 1e-10, f"max |sum-1| {r[0]:.2e}, uniform dev {r[1]:.2e}"))
    timed("log-det decomposition", lambda: check_logdet_decomposition(seed=seed),
          lambda w: (w < 1e-6, f"max abs err {w:.2e}"))
    timed("finite-difference gradients", lambda: check_gradients(seed=seed),
          lambda d: (max(d.values()) < 1e-4, ", ".join(f"{k} {v:.1e}" for k, v in d.items())))
    timed("F metric vs reported rows", check_f_metric,
          lambda d: (max(d.values()) <= 5e-4, ", ".join(f"{k} {v:.1e}" for k, v in d.items())))
    return results
