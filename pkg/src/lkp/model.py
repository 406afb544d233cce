"""Matrix-factorization embeddings, Adam, and the training loop."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import _backend, objectives
from ._backend import njit
from .diversity import DiversityKernel, median_sigma
from .errors import ContractViolation, DataError, TrainingError
from .rng import rng_for
from .sampling import build_schedule, sample_negatives, train_positive_keys

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "lkp-model"
CHECKPOINT_VERSION = "v1"
INIT_STD = 0.01

OBJECTIVES = ("lkp_ps", "lkp_nps", "bpr", "bce")
SAMPLERS = ("R", "S")
KERNEL_MODES = ("pretrained", "gaussian")

VARIANTS = {
    "PR": ("lkp_ps", "R", "pretrained"),
    "PS": ("lkp_ps", "S", "pretrained"),
    "NPR": ("lkp_nps", "R", "pretrained"),
    "NPS": ("lkp_nps", "S", "pretrained"),
    "PSE": ("lkp_ps", "S", "gaussian"),
    "NPSE": ("lkp_nps", "S", "gaussian"),
}


@dataclass
class EmbeddingTable:
    user_vecs: np.ndarray
    item_vecs: np.ndarray

    def __post_init__(self):
        self.user_vecs = np.ascontiguousarray(self.user_vecs, dtype=np.float64)
        self.item_vecs = np.ascontiguousarray(self.item_vecs, dtype=np.float64)
        if self.user_vecs.ndim != 2 or self.item_vecs.ndim != 2:
            raise ContractViolation("embedding tables must be 2-D")
        if self.user_vecs.shape[1] != self.item_vecs.shape[1]:
            raise ContractViolation("user and item embeddings must share d")
        if not (np.isfinite(self.user_vecs).all() and np.isfinite(self.item_vecs).all()):
            raise ContractViolation("embeddings must be finite")

    @property
    def d(self) -> int:
        return self.user_vecs.shape[1]

    @property
    def num_users(self) -> int:
        return self.user_vecs.shape[0]

    @property
    def num_items(self) -> int:
        return self.item_vecs.shape[0]

    def copy(self) -> EmbeddingTable:
        return EmbeddingTable(self.user_vecs.copy(), self.item_vecs.copy())

    def scores(self, user: int) -> np.ndarray:
        with np.errstate(over="ignore", invalid="ignore"):
            return self.item_vecs @ self.user_vecs[user]

    def to_bytes(self) -> bytes:
        head = f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION} {self.num_users} {self.num_items} {self.d}\n"
        return head.encode() + self.user_vecs.astype("<f8").tobytes() + self.item_vecs.astype("<f8").tobytes()

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> EmbeddingTable:
        raw = Path(path).read_bytes()
        head, sep, body = raw.partition(b"\n")
        parts = head.decode(errors="replace").split()
        if not sep or len(parts) != 5 or parts[0] != CHECKPOINT_MAGIC or parts[1] != CHECKPOINT_VERSION:
            raise DataError(f"{path}: not an {CHECKPOINT_MAGIC} {CHECKPOINT_VERSION} file")
        nu, ni, d = (int(x) for x in parts[2:])
        if len(body) != (nu + ni) * d * 8:
            raise DataError(f"{path}: expected {(nu + ni) * d * 8} payload bytes, found {len(body)}")
        flat = np.frombuffer(body, dtype="<f8").astype(np.float64)
        return cls(flat[: nu * d].reshape(nu, d), flat[nu * d :].reshape(ni, d))


def init_embeddings(num_users: int, num_items: int, d: int = 64, seed: int = 0) -> EmbeddingTable:
    """Entries i.i.d. normal(0, 0.01)."""
    if min(num_users, num_items, d) < 1:
        raise ContractViolation("num_users, num_items and d must be positive")
    rng = rng_for(seed, "init-embeddings")
    return EmbeddingTable(
        rng.normal(0.0, INIT_STD, size=(num_users, d)),
        rng.normal(0.0, INIT_STD, size=(num_items, d)),
    )


# ---------------------------------------------------------------------------
# Adam


@dataclass(frozen=True)
class AdamHyper:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    l2: float = 1e-4


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    skipped: int = 0

    @classmethod
    def zeros_like(cls, params) -> AdamState:
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


@njit(fastmath=True)
def _adam_nb(p, g, m, v, lr, b1, b2, eps, l2, c1, c2):
    p = p.ravel()
    g = g.ravel()
    m = m.ravel()
    v = v.ravel()
    for i in range(p.size):
        gi = g[i] + l2 * p[i]
        m[i] = b1 * m[i] + (1.0 - b1) * gi
        v[i] = b2 * v[i] + (1.0 - b2) * gi * gi
        p[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)


def _adam_np(p, g, m, v, lr, b1, b2, eps, l2, c1, c2):
    g = g + l2 * p
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * g * g
    p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def adam_step(params, grads, state: AdamState, hyper: AdamHyper) -> bool:
    """One bias-corrected Adam update, in place. L2 adds l2 * param to every
    gradient. A non-finite gradient skips the step (``state.skipped`` counts
    them); returns whether the step was applied."""
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ContractViolation("parameter and gradient shapes differ")
    if not all(np.isfinite(g).all() for g in grads):
        state.skipped += 1
        return False
    state.t += 1
    c1 = 1.0 - hyper.beta1**state.t
    c2 = 1.0 - hyper.beta2**state.t
    step = _adam_nb if _backend.USE_NUMBA else _adam_np
    for p, g, m, v in zip(params, grads, state.m, state.v):
        step(p, np.ascontiguousarray(g, dtype=np.float64), m, v,
             hyper.learning_rate, hyper.beta1, hyper.beta2, hyper.eps, hyper.l2, c1, c2)
    return True


# ---------------------------------------------------------------------------
# configuration


@dataclass
class TrainConfig:
    objective: str = "lkp_nps"
    sampler: str = "S"
    kernel_mode: str = "pretrained"
    k: int = 5
    n: int = 5
    learning_rate: float = 1e-3
    l2: float = 1e-4
    epochs: int = 50
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    d: int = 64
    batch_size: int = 64
    eval_interval: int = 5
    patience: int = 20
    jitter: float = 1e-6
    trend_epochs: tuple[int, ...] = ()
    trend_instances: int = 100

    def __post_init__(self):
        self.trend_epochs = tuple(int(e) for e in self.trend_epochs)
        self.validate()

    def validate(self) -> None:
        if self.objective not in OBJECTIVES:
            raise ContractViolation(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.sampler not in SAMPLERS:
            raise ContractViolation(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")
        if self.kernel_mode not in KERNEL_MODES:
            raise ContractViolation(f"kernel_mode must be one of {KERNEL_MODES}, got {self.kernel_mode!r}")
        if self.objective.startswith("lkp"):
            if self.k < 2 or self.n < 1:
                raise ContractViolation("need k >= 2 and n >= 1")
            if self.k + self.n > objectives.MAX_GROUND_SET:
                raise ContractViolation(f"k + n must be <= {objectives.MAX_GROUND_SET}")
        if self.objective == "lkp_nps" and self.n != self.k:
            raise ContractViolation(f"lkp_nps requires n == k (got k={self.k}, n={self.n})")
        if self.epochs < 0 or self.batch_size < 1 or self.eval_interval < 1 or self.patience < 0 or self.d < 1:
            raise ContractViolation("epochs, patience >= 0; batch_size, eval_interval, d >= 1")
        if not self.learning_rate > 0 or self.l2 < 0 or self.adam_eps <= 0:
            raise ContractViolation("learning_rate and adam_eps must be positive, l2 non-negative")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ContractViolation("Adam betas must lie in [0, 1)")

    @classmethod
    def variant(cls, name: str, **overrides) -> TrainConfig:
        try:
            obj, sampler, mode = VARIANTS[name]
        except KeyError:
            raise ContractViolation(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}") from None
        return cls(objective=obj, sampler=sampler, kernel_mode=mode, **overrides)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def hyper(self) -> AdamHyper:
        return AdamHyper(self.learning_rate, self.adam_beta1, self.adam_beta2, self.adam_eps, self.l2)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trend_epochs"] = list(self.trend_epochs)
        return d


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: EmbeddingTable
    final: EmbeddingTable
    log: list[dict]
    best_epoch: int
    best_val_ndcg5: float
    skipped_steps: int = 0
    skipped_instances: int = 0
    trends: list = field(default_factory=list)

    def log_jsonl(self, include_wall: bool = True) -> str:
        rows = self.log if include_wall else [{k: v for k, v in r.items() if k != "wall_ms"} for r in self.log]
        return "".join(json.dumps(r) + "\n" for r in rows)


def _lkp_batches(data, config, epoch):
    sched = build_schedule(data, config.sampler, config.k, config.n, config.seed, epoch)
    order = rng_for(config.seed, "order", epoch).permutation(len(sched))
    users = sched.users[order]
    items = sched.items[order]
    for lo in range(0, users.size, config.batch_size):
        yield users[lo : lo + config.batch_size], items[lo : lo + config.batch_size]


def _pointwise_examples(data, config, epoch, keys):
    """Every training positive once, each paired with one sampled negative."""
    hist = data.training_positives()
    users = np.concatenate([np.full(len(h), u, dtype=np.int64) for u, h in enumerate(hist)])
    pos = np.concatenate([np.asarray(h, dtype=np.int64) for h in hist])
    neg = sample_negatives(rng_for(config.seed, "pointwise-neg", epoch), users, 1, data.num_items, keys)[:, 0]
    order = rng_for(config.seed, "order", epoch).permutation(users.size)
    return users[order], pos[order], neg[order]


def _trend_instances(data, config):
    from .dpp import GroundSetInstance

    sched = build_schedule(data, config.sampler, config.k, config.n, config.seed, epoch=0)
    pick = rng_for(config.seed, "trend-pick").choice(len(sched), size=min(config.trend_instances, len(sched)), replace=False)
    return [GroundSetInstance(int(sched.users[i]), tuple(sched.targets[i]), tuple(sched.negatives[i])) for i in np.sort(pick)]


def train(config: TrainConfig, data, K: DiversityKernel | None = None, *, validate: bool = True) -> TrainResult:
    """Fit embeddings with Adam on mini-batch mean gradients.

    Validation NDCG@5 is measured at epoch 0, every ``eval_interval`` epochs
    and at the last epoch; the best-scoring parameters are returned (ties keep
    the earlier epoch). ``patience`` evaluations without improvement stop
    training early (0 disables).
    """
    from .evaluation import probability_trend, validation_ndcg

    config.validate()
    if not data.is_split:
        raise ContractViolation("training needs a split dataset")
    lkp = config.objective.startswith("lkp")
    if lkp and config.kernel_mode == "pretrained":
        if K is None or K.mode != "pretrained" or not K.frozen:
            raise ContractViolation("pretrained kernel mode needs a frozen pretrained DiversityKernel")
        if K.num_items != data.num_items:
            raise ContractViolation(f"kernel covers {K.num_items} items, dataset has {data.num_items}")

    emb = init_embeddings(data.num_users, data.num_items, config.d, config.seed)
    params = [emb.user_vecs, emb.item_vecs]
    state = AdamState.zeros_like(params)
    hyper = config.hyper()
    keys = train_positive_keys(data.training_positives(), data.num_items)
    has_valid = validate and data.valid is not None and any(len(v) for v in data.valid)

    def kernel_for(epoch):
        if config.kernel_mode == "pretrained":
            return K
        sigma = median_sigma(emb.item_vecs, rng_for(config.seed, "sigma", epoch))
        return DiversityKernel.gaussian(sigma)

    trend_set = _trend_instances(data, config) if (lkp and config.trend_epochs) else None
    trends = []

    def maybe_trend(epoch):
        if trend_set is not None and epoch in config.trend_epochs:
            trends.append(probability_trend(emb, kernel_for(epoch), trend_set, config.k, epoch=epoch, jitter=config.jitter))

    val0 = validation_ndcg(emb, data) if has_valid else float("nan")
    log_rows = [{"epoch": 0, "loss": None, "val_ndcg5": val0 if has_valid else None, "wall_ms": 0.0}]
    best = (val0, 0, emb.copy())
    maybe_trend(0)
    since_best = 0
    bad_epochs = 0
    skipped_instances = 0

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        total, count = 0.0, 0
        if lkp:
            Kep = kernel_for(epoch)
            for users, items in _lkp_batches(data, config, epoch):
                b = objectives.lkp_batch(users, items, config.k, emb, Kep, nps=config.objective == "lkp_nps", jitter=config.jitter)
                ok = int(b.ok.sum())
                skipped_instances += b.skipped
                if ok == 0:
                    continue
                total += float(b.loss[b.ok].sum())
                count += ok
                gu = np.zeros_like(emb.user_vecs)
                gi = np.zeros_like(emb.item_vecs)
                np.add.at(gu, b.users, b.user_grad)
                np.add.at(gi, b.items.ravel(), b.item_grad.reshape(-1, emb.d))
                adam_step(params, [gu / ok, gi / ok], state, hyper)
        else:
            users, pos, neg = _pointwise_examples(data, config, epoch, keys)
            for lo in range(0, users.size, config.batch_size):
                u, p, g = users[lo : lo + config.batch_size], pos[lo : lo + config.batch_size], neg[lo : lo + config.batch_size]
                gu = np.zeros_like(emb.user_vecs)
                gi = np.zeros_like(emb.item_vecs)
                if config.objective == "bpr":
                    loss, du, dp, dn = objectives.bpr_batch(u, p, g, emb)
                    np.add.at(gu, u, du)
                    np.add.at(gi, p, dp)
                    np.add.at(gi, g, dn)
                else:
                    uu = np.concatenate([u, u])
                    ii = np.concatenate([p, g])
                    lab = np.concatenate([np.ones(u.size), np.zeros(u.size)])
                    loss, du, di = objectives.bce_batch(uu, ii, lab, emb)
                    np.add.at(gu, uu, du)
                    np.add.at(gi, ii, di)
                total += float(loss.sum())
                count += u.size
                adam_step(params, [gu / u.size, gi / u.size], state, hyper)

        epoch_loss = total / count if count else float("nan")
        if not np.isfinite(epoch_loss):
            bad_epochs += 1
            if bad_epochs >= 2:
                log.error("training diverged: non-finite loss at epochs %d and %d", epoch - 1, epoch)
                raise TrainingError(f"loss non-finite for two consecutive epochs (epoch {epoch})")
        else:
            bad_epochs = 0

        row = {"epoch": epoch, "loss": epoch_loss, "val_ndcg5": None}
        if has_valid and (epoch % config.eval_interval == 0 or epoch == config.epochs):
            val = validation_ndcg(emb, data)
            row["val_ndcg5"] = val
            if val > best[0]:
                best = (val, epoch, emb.copy())
                since_best = 0
            else:
                since_best += 1
        row["wall_ms"] = (time.perf_counter() - t0) * 1e3
        log_rows.append(row)
        log.info("epoch %d loss %.6f val_ndcg5 %s", epoch, epoch_loss, row["val_ndcg5"])
        maybe_trend(epoch)
        if config.patience and since_best >= config.patience:
            log.info("early stop at epoch %d (best epoch %d)", epoch, best[1])
            break

    if not has_valid:
        best = (float("nan"), log_rows[-1]["epoch"], emb.copy())
    return TrainResult(
        model=best[2],
        final=emb,
        log=log_rows,
        best_epoch=best[1],
        best_val_ndcg5=best[0],
        skipped_steps=state.skipped,
        skipped_instances=skipped_instances,
        trends=trends,
    )
