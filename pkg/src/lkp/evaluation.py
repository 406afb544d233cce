"""Top-N evaluation and the k-DPP probability-trend diagnostic."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dpp import JITTER, enumerate_k_subsets, ground_set_kernels

CUTOFFS = (5, 10, 20)
_FMAX = np.finfo(np.float64).max


def _clean_scores(scores: np.ndarray) -> np.ndarray:
    return np.nan_to_num(scores, nan=-_FMAX, posinf=_FMAX, neginf=-_FMAX)


def _top_n_row(scores: np.ndarray, N: int) -> np.ndarray:
    if N >= scores.size:
        return np.argsort(-scores, kind="stable")
    thr = np.partition(scores, scores.size - N)[scores.size - N]
    above = np.flatnonzero(scores > thr)
    ties = np.flatnonzero(scores == thr)[: N - above.size]
    pick = np.concatenate([above, ties])
    return pick[np.lexsort((pick, -scores[pick]))]


def rank_users(model, users, exclude, N: int, chunk: int = 1024) -> np.ndarray:
    """Top-N item ids per user, score descending, ties by ascending id.

    ``exclude[j]`` lists items never recommended to ``users[j]``.
    """
    users = np.asarray(users, dtype=np.int64)
    num_items = model.item_vecs.shape[0]
    N = min(N, num_items)
    out = np.empty((users.size, N), dtype=np.int64)
    for lo in range(0, users.size, chunk):
        hi = min(lo + chunk, users.size)
        with np.errstate(over="ignore", invalid="ignore"):
            scores = _clean_scores(model.user_vecs[users[lo:hi]] @ model.item_vecs.T)
        for r in range(hi - lo):
            ex = exclude[lo + r]
            if len(ex):
                scores[r, np.asarray(ex, dtype=np.int64)] = -np.inf
            out[lo + r] = _top_n_row(scores[r], N)
    return out


def recommend_top_n(model, user: int, N: int, exclude=()) -> list[int]:
    if N < 1:
        raise ValueError("N must be >= 1")
    ex = np.fromiter((int(i) for i in exclude), dtype=np.int64)
    ranked = rank_users(model, [user], [ex], N + ex.size)[0]
    keep = ranked[~np.isin(ranked, ex)]
    return keep[:N].tolist()


def compute_metrics(recommendations, test_positives, categories, total_categories: int, N: int):
    """(recall, ndcg, cc, f) at cutoff N for one user.

    f is the harmonic mean of (recall + ndcg) / 2 and cc. Returns None when
    the user has no test positives.
    """
    recs = list(recommendations)
    if N > len(recs):
        raise ValueError(f"cutoff {N} exceeds the {len(recs)} recommendations given")
    test = set(int(i) for i in test_positives)
    if not test:
        return None
    top = recs[:N]
    gains = np.array([1.0 if int(i) in test else 0.0 for i in top])
    discounts = 1.0 / np.log2(np.arange(2, N + 2))
    recall = gains.sum() / len(test)
    idcg = discounts[: min(N, len(test))].sum()
    ndcg = float(gains @ discounts / idcg)
    cats = np.asarray(categories)
    cc = len({int(cats[int(i)]) for i in top}) / total_categories
    return float(recall), ndcg, float(cc), f_score(recall, ndcg, cc)


def f_score(recall: float, ndcg: float, cc: float) -> float:
    q = (recall + ndcg) / 2.0
    return 0.0 if q + cc == 0 else float(2.0 * q * cc / (q + cc))


@dataclass
class EvalReport:
    metrics: dict[int, dict[str, float]]
    num_users_evaluated: int

    def to_dict(self) -> dict:
        return {
            "num_users_evaluated": self.num_users_evaluated,
            "metrics": {str(n): m for n, m in sorted(self.metrics.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> EvalReport:
        return cls({int(n): dict(m) for n, m in d["metrics"].items()}, int(d["num_users_evaluated"]))

    def __getitem__(self, N: int) -> dict[str, float]:
        return self.metrics[N]


def _exclusions(data, split: str):
    parts = [data.train]
    if split == "test" and data.valid is not None:
        parts.append(data.valid)
    return [np.concatenate([p[u] for p in parts]) for u in range(data.num_users)]


def evaluate(model, data, cutoffs=CUTOFFS, split: str = "test", users=None) -> EvalReport:
    """Macro-averaged Recall/NDCG/CC/F on the validation or test split.

    Train positives (and validation positives, for test) are excluded from
    the ranking; users with an empty target split are skipped.
    """
    if not data.is_split:
        raise ValueError("dataset has no train/valid/test split")
    truth = data.test if split == "test" else data.valid
    cand = np.arange(data.num_users) if users is None else np.asarray(users)
    cand = np.array([u for u in cand if len(truth[u])], dtype=np.int64)
    cutoffs = sorted(set(int(c) for c in cutoffs))
    acc = {n: np.zeros(4) for n in cutoffs}
    if cand.size:
        excl = _exclusions(data, split)
        ranked = rank_users(model, cand, [excl[u] for u in cand], max(cutoffs))
        for row, u in enumerate(cand):
            for n in cutoffs:
                acc[n] += compute_metrics(ranked[row], truth[u], data.categories, data.num_categories, n)
    count = max(cand.size, 1)
    metrics = {
        n: dict(zip(("recall", "ndcg", "cc", "f"), (acc[n] / count).tolist())) for n in cutoffs
    }
    for n in cutoffs:
        m = metrics[n]
        m["f"] = f_score(m["recall"], m["ndcg"], m["cc"]) if cand.size else 0.0
    return EvalReport(metrics, int(cand.size))


def validation_ndcg(model, data, N: int = 5) -> float:
    return evaluate(model, data, (N,), split="valid").metrics[N]["ndcg"]


# ---------------------------------------------------------------------------
# probability trend


@dataclass
class TrendReport:
    """Mean per-subset k-DPP probability grouped by how many targets the
    subset holds (0..k), averaged over instances."""

    epoch: int
    k: int
    n: int
    group_means: list[float]
    group_sizes: list[int]
    num_instances: int
    per_instance_mass: list[float] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "k": self.k,
            "n": self.n,
            "num_instances": self.num_instances,
            "groups": [
                {"target_count": g, "mean_prob": p, "num_subsets": s}
                for g, (p, s) in enumerate(zip(self.group_means, self.group_sizes))
            ],
        }

    def csv_rows(self):
        return [(self.epoch, g, p) for g, p in enumerate(self.group_means)]


def trends_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "target_count", "mean_prob"])
    for rep in reports:
        for row in rep.csv_rows():
            w.writerow([row[0], row[1], repr(float(row[2]))])
    return buf.getvalue()


def probability_trend(model, K, instances, k: int, *, epoch: int = 0, jitter: float = JITTER) -> TrendReport:
    """Group every k-subset of each instance's ground set by its number of
    targets; average the per-subset probabilities within groups, then
    across instances."""
    if not instances:
        raise ValueError("no instances given")
    n = instances[0].n
    if any(inst.k != k or inst.n != n for inst in instances):
        raise ValueError("all instances must share k and n")
    users = np.array([inst.user for inst in instances])
    items = np.array([inst.items for inst in instances])
    subsets = enumerate_k_subsets(k + n, k)
    L, *_ = ground_set_kernels(users, items, model, K, jitter)
    probs = np.exp(kernels.subset_logprobs(L, subsets))
    count = (subsets < k).sum(axis=1)
    groups = list(range(k + 1))
    sizes = [int((count == g).sum()) for g in groups]
    per_inst = np.stack(
        [probs[:, count == g].mean(axis=1) if sizes[g] else np.zeros(len(instances)) for g in groups], axis=1
    )
    mass = (per_inst * np.array(sizes)[None, :]).sum(axis=1)
    return TrendReport(
        epoch=epoch,
        k=k,
        n=n,
        group_means=per_inst.mean(axis=0).tolist(),
        group_sizes=sizes,
        num_instances=len(instances),
        per_instance_mass=mass.tolist(),
    )


def expected_group_size(k: int, n: int, g: int) -> int:
    return math.comb(k, g) * math.comb(n, k - g)
