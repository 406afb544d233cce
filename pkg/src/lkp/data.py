"""Implicit-feedback datasets: ingestion, filtering, splitting, synthesis."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .rng import rng_for

log = logging.getLogger(__name__)

MIN_INTERACTIONS = 10
FORMAT_NAME = "lkp-dataset"
FORMAT_VERSION = 1
UNKNOWN_CATEGORY = "__unknown__"


@dataclass
class InteractionDataset:
    """Binary user-item feedback with one category per item.

    ``positives[u]`` is user u's positive items in chronological order; the
    split lists keep that order.
    """

    num_users: int
    num_items: int
    num_categories: int
    positives: list[np.ndarray]
    categories: np.ndarray
    train: list[np.ndarray] | None = None
    valid: list[np.ndarray] | None = None
    test: list[np.ndarray] | None = None
    user_ids: list[str] | None = None
    item_ids: list[str] | None = None
    category_names: list[str] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.positives = [np.asarray(p, dtype=np.int64) for p in self.positives]
        self.categories = np.asarray(self.categories, dtype=np.int64)
        if len(self.positives) != self.num_users:
            raise DataError("positives must have one entry per user")
        if self.categories.shape != (self.num_items,):
            raise DataError("every item needs exactly one category")
        if self.num_items and (self.categories.min() < 0 or self.categories.max() >= self.num_categories):
            raise DataError("category ids out of range")
        for name in ("train", "valid", "test"):
            part = getattr(self, name)
            if part is not None:
                setattr(self, name, [np.asarray(p, dtype=np.int64) for p in part])

    @property
    def is_split(self) -> bool:
        return self.train is not None

    @property
    def num_interactions(self) -> int:
        return int(sum(len(p) for p in self.positives))

    def training_positives(self) -> list[np.ndarray]:
        return self.train if self.train is not None else self.positives

    def user_degrees(self) -> np.ndarray:
        return np.array([len(p) for p in self.positives], dtype=np.int64)

    def item_degrees(self) -> np.ndarray:
        if not self.positives:
            return np.zeros(self.num_items, dtype=np.int64)
        return np.bincount(np.concatenate(self.positives), minlength=self.num_items)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        def lists(parts):
            return None if parts is None else [p.tolist() for p in parts]

        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "num_users": self.num_users,
            "num_items": self.num_items,
            "num_categories": self.num_categories,
            "positives": lists(self.positives),
            "categories": self.categories.tolist(),
            "train": lists(self.train),
            "valid": lists(self.valid),
            "test": lists(self.test),
            "user_ids": self.user_ids,
            "item_ids": self.item_ids,
            "category_names": self.category_names,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> InteractionDataset:
        if d.get("format") != FORMAT_NAME:
            raise DataError("not an lkp dataset container")
        if d.get("version") != FORMAT_VERSION:
            raise DataError(f"unsupported dataset version {d.get('version')}")
        return cls(
            num_users=d["num_users"],
            num_items=d["num_items"],
            num_categories=d["num_categories"],
            positives=d["positives"],
            categories=d["categories"],
            train=d.get("train"),
            valid=d.get("valid"),
            test=d.get("test"),
            user_ids=d.get("user_ids"),
            item_ids=d.get("item_ids"),
            category_names=d.get("category_names"),
            meta=d.get("meta") or {},
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), separators=(",", ":")))

    @classmethod
    def load(cls, path) -> InteractionDataset:
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read dataset {path}: {exc}") from exc
        return cls.from_dict(d)


# ---------------------------------------------------------------------------
# ingestion


def _read_rows(path, min_cols: int, max_cols: int):
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if not min_cols <= len(row) <= max_cols:
                raise DataError(f"{path}:{lineno}: expected {min_cols}-{max_cols} columns, got {len(row)}")
            yield lineno, [c.strip() for c in row]


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def filter_min_degree(pairs: list[tuple[str, str]], min_count: int = MIN_INTERACTIONS):
    """Drop users and items with fewer than ``min_count`` positives until
    nothing changes. ``pairs`` is an ordered list of (user, item)."""
    pairs = list(pairs)
    while True:
        ucount: dict[str, int] = {}
        icount: dict[str, int] = {}
        for u, i in pairs:
            ucount[u] = ucount.get(u, 0) + 1
            icount[i] = icount.get(i, 0) + 1
        kept = [(u, i) for u, i in pairs if ucount[u] >= min_count and icount[i] >= min_count]
        if len(kept) == len(pairs):
            return kept
        pairs = kept


def ingest(
    ratings_path,
    categories_path,
    threshold: float = 5.0,
    *,
    min_interactions: int = MIN_INTERACTIONS,
    category_sep: str = "|",
) -> InteractionDataset:
    """Read ``user_id,item_id,rating[,timestamp]`` and ``item_id,category``.

    Ratings >= ``threshold`` become positives. Users and items are filtered
    to a fixpoint of at least ``min_interactions`` positives, ids are
    re-indexed densely in first-appearance order, and each user's positives
    are ordered by timestamp (file order on ties or missing timestamps).
    Multi-category items keep their first listed category.
    """
    events = []  # (user, item, timestamp or None, file position)
    seen: set[tuple[str, str]] = set()
    for pos, (lineno, row) in enumerate(_read_rows(ratings_path, 3, 4)):
        if not _is_number(row[2]):
            if lineno == 1 and pos == 0:
                continue  # header
            raise DataError(f"{ratings_path}:{lineno}: rating {row[2]!r} is not numeric")
        ts = None
        if len(row) == 4 and row[3] != "":
            if not _is_number(row[3]):
                if lineno == 1 and pos == 0:
                    continue
                raise DataError(f"{ratings_path}:{lineno}: timestamp {row[3]!r} is not numeric")
            ts = float(row[3])
        if float(row[2]) < threshold:
            continue
        key = (row[0], row[1])
        if key in seen:
            continue
        seen.add(key)
        events.append((row[0], row[1], ts, pos))

    cat_of: dict[str, str] = {}
    for pos, (lineno, row) in enumerate(_read_rows(categories_path, 2, 2)):
        item, cat = row
        if pos == 0 and lineno == 1 and item.lower() in ("item_id", "item", "itemid"):
            continue
        first = cat.split(category_sep)[0].strip() if category_sep else cat
        cat_of.setdefault(item, first or UNKNOWN_CATEGORY)

    # chronological order per user, file order on ties / missing timestamps
    events.sort(key=lambda e: (e[2] is None, e[2] if e[2] is not None else 0.0, e[3]))
    kept = filter_min_degree([(u, i) for u, i, _, _ in events], min_interactions)
    if not kept:
        raise DataError("no interactions survive thresholding and filtering")

    # dense ids in order of first appearance in the file
    kept_set = set(kept)
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    for u, i, _, _ in sorted(events, key=lambda e: e[3]):
        if (u, i) in kept_set:
            user_index.setdefault(u, len(user_index))
            item_index.setdefault(i, len(item_index))
    positives: list[list[int]] = [[] for _ in user_index]
    for u, i in kept:
        positives[user_index[u]].append(item_index[i])

    item_ids = list(item_index)
    cat_names: list[str] = []
    cat_index: dict[str, int] = {}
    categories = []
    missing = 0
    for item in item_ids:
        name = cat_of.get(item)
        if name is None:
            name = UNKNOWN_CATEGORY
            missing += 1
        if name not in cat_index:
            cat_index[name] = len(cat_names)
            cat_names.append(name)
        categories.append(cat_index[name])
    if missing:
        log.warning("%d items have no category; assigned %r", missing, UNKNOWN_CATEGORY)

    return InteractionDataset(
        num_users=len(user_index),
        num_items=len(item_index),
        num_categories=len(cat_names),
        positives=positives,
        categories=np.array(categories, dtype=np.int64),
        user_ids=list(user_index),
        item_ids=item_ids,
        category_names=cat_names,
        meta={"threshold": threshold, "min_interactions": min_interactions},
    )


# ---------------------------------------------------------------------------
# splitting


def split_sizes(n: int, ratios=(0.7, 0.1, 0.2)) -> tuple[int, int, int]:
    """(train, valid, test) counts; remainders go to train, test gets at
    least one item whenever n >= 2."""
    n_valid = int(np.floor(n * ratios[1] + 1e-9))
    n_test = int(np.floor(n * ratios[2] + 1e-9))
    if n_test == 0 and n >= 2:
        n_test = 1
    n_train = n - n_valid - n_test
    return n_train, n_valid, n_test


def split(data: InteractionDataset, ratios=(0.7, 0.1, 0.2), seed: int = 0) -> InteractionDataset:
    """Per-user uniform random 70/10/20 partition (seeded, order-preserving)."""
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise DataError(f"split ratios must be three non-negative values summing to 1, got {ratios}")
    train, valid, test = [], [], []
    for u, pos in enumerate(data.positives):
        n = len(pos)
        n_train, n_valid, n_test = split_sizes(n, ratios)
        if n_valid == 0 and n > 0:
            log.info("user %d has %d positives; validation split is empty", u, n)
        perm = rng_for(seed, "split", u).permutation(n)
        parts = np.split(perm, [n_train, n_train + n_valid])
        train.append(pos[np.sort(parts[0])])
        valid.append(pos[np.sort(parts[1])])
        test.append(pos[np.sort(parts[2])])
    meta = dict(data.meta, split_seed=seed, split_ratios=list(ratios))
    return InteractionDataset(
        num_users=data.num_users,
        num_items=data.num_items,
        num_categories=data.num_categories,
        positives=data.positives,
        categories=data.categories,
        train=train,
        valid=valid,
        test=test,
        user_ids=data.user_ids,
        item_ids=data.item_ids,
        category_names=data.category_names,
        meta=meta,
    )


# ---------------------------------------------------------------------------
# synthetic data

IN_GROUP_P = 0.6
CROSS_GROUP_P = 0.006
CATEGORY_BAND = 6
SESSION_SIZE = 5


def _session_order(items: np.ndarray, categories: np.ndarray, session_size: int, rng) -> np.ndarray:
    """Chronology as consecutive sessions of distinct categories: each session
    takes one remaining item from each of up to ``session_size`` randomly
    chosen categories."""
    items = rng.permutation(items)
    cats = categories[items]
    queues = {int(c): list(items[cats == c]) for c in np.unique(cats)}
    order = []
    while queues:
        live = np.array(sorted(queues))
        for c in rng.permutation(live)[:session_size]:
            order.append(queues[int(c)].pop())
            if not queues[int(c)]:
                del queues[int(c)]
    return np.asarray(order, dtype=np.int64)


def make_synthetic(
    num_users: int = 1000,
    num_items: int = 2000,
    num_categories: int = 20,
    seed: int = 0,
    *,
    num_groups: int | None = None,
    category_band: int = CATEGORY_BAND,
    in_group_p: float = IN_GROUP_P,
    cross_group_p: float = CROSS_GROUP_P,
    session_size: int = SESSION_SIZE,
    min_interactions: int = MIN_INTERACTIONS,
) -> InteractionDataset:
    """Block-structured implicit feedback with category-diverse sessions.

    Users and items are dealt round-robin into latent groups (one group per
    category by default); a user interacts with an in-group item with
    probability ``in_group_p`` and with any other item with ``cross_group_p``.
    Group g's items draw their category uniformly from a band of
    ``category_band`` consecutive categories starting at g's own, so groups
    overlap in category space. Degrees are topped up with in-group
    interactions until every user and item has at least ``min_interactions``.

    Chronology: in-group items are consumed in sessions of up to
    ``session_size`` distinct categories (substitutes rarely sit side by
    side); cross-group items land at random positions and top-ups come last.
    """
    if min(num_users, num_items, num_categories) < 1:
        raise DataError("num_users, num_items and num_categories must all be >= 1")
    if session_size < 1:
        raise DataError("session_size must be >= 1")
    groups = min(num_groups or num_categories, num_items, num_users)
    band = max(1, min(category_band, num_categories))
    rng = rng_for(seed, "synthetic")

    user_group = rng.permutation(np.arange(num_users) % groups)
    item_group = rng.permutation(np.arange(num_items) % groups)
    start = (np.arange(groups) * num_categories) // groups
    categories = (start[item_group] + rng.integers(0, band, size=num_items)) % num_categories

    same = user_group[:, None] == item_group[None, :]
    prob = np.where(same, in_group_p, cross_group_p)
    y = rng.random((num_users, num_items)) < prob
    base = y.copy()

    need = min(min_interactions, num_users)
    for i in np.flatnonzero(y.sum(axis=0) < need):
        pool = np.flatnonzero(~y[:, i] & (user_group == item_group[i]))
        if pool.size < need - y[:, i].sum():
            pool = np.flatnonzero(~y[:, i])
        extra = rng.choice(pool, size=need - int(y[:, i].sum()), replace=False)
        y[extra, i] = True
    need = min(min_interactions, num_items)
    for u in np.flatnonzero(y.sum(axis=1) < need):
        pool = np.flatnonzero(~y[u] & (item_group == user_group[u]))
        if pool.size < need - y[u].sum():
            pool = np.flatnonzero(~y[u])
        extra = rng.choice(pool, size=need - int(y[u].sum()), replace=False)
        y[u, extra] = True

    positives = []
    for u in range(num_users):
        seq = list(_session_order(np.flatnonzero(base[u] & same[u]), categories, session_size, rng))
        for i in rng.permutation(np.flatnonzero(base[u] & ~same[u])):
            seq.insert(int(rng.integers(0, len(seq) + 1)), int(i))
        seq.extend(rng.permutation(np.flatnonzero(y[u] & ~base[u])).tolist())
        positives.append(np.asarray(seq, dtype=np.int64))
    return InteractionDataset(
        num_users=num_users,
        num_items=num_items,
        num_categories=num_categories,
        positives=positives,
        categories=categories,
        meta={
            "synthetic": True,
            "seed": seed,
            "num_groups": groups,
            "session_size": session_size,
            "user_group": user_group.tolist(),
            "item_group": item_group.tolist(),
        },
    )
