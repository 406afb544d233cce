import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lkp.data import InteractionDataset, make_synthetic, split
from lkp.errors import ContractViolation
from lkp.sampling import build_schedule, sample_negatives, schedule_R, schedule_S, train_positive_keys, window_starts


def one_user(p, num_items=40):
    return InteractionDataset(1, num_items, 1, [np.arange(p)[::-1] + 3], np.zeros(num_items, dtype=int))


def covered(sched, data):
    hist = data.training_positives()
    by_user = {}
    for u, t in zip(sched.users, sched.targets):
        by_user.setdefault(int(u), set()).update(t.tolist())
    return all(by_user.get(u, set()) == set(h.tolist()) for u, h in enumerate(hist) if len(h) >= sched.k)


def test_exact_tiling():
    data = one_user(10)
    s = schedule_S(data, 5, 5, seed=0)
    assert len(s) == 2
    assert sorted(np.concatenate(s.targets).tolist()) == sorted(data.positives[0].tolist())


def test_back_up_window():
    data = one_user(7)
    s = schedule_S(data, 5, 3, seed=0)
    hist = data.positives[0]
    assert s.targets.tolist() == [hist[0:5].tolist(), hist[2:7].tolist()]
    assert covered(s, data)


def test_window_starts():
    assert window_starts(10, 5) == [0, 5]
    assert window_starts(7, 5) == [0, 2]
    assert window_starts(5, 5) == [0]
    assert window_starts(4, 5) == []


def test_k_equal_to_history_gives_one_instance():
    data = one_user(6)
    s = schedule_R(data, 6, 2, seed=4)
    assert len(s) == 1
    assert set(s.targets[0].tolist()) == set(data.positives[0].tolist())


def test_short_users_are_skipped_with_warning(caplog):
    data = InteractionDataset(2, 30, 1, [np.arange(3), np.arange(3, 13)], np.zeros(30, dtype=int))
    with caplog.at_level(logging.WARNING):
        s = schedule_S(data, 5, 2, seed=0)
    assert set(s.users.tolist()) == {1}
    assert "fewer than k" in caplog.text


def test_user_without_positives_is_skipped():
    data = InteractionDataset(2, 30, 1, [np.arange(0), np.arange(10)], np.zeros(30, dtype=int))
    assert set(schedule_S(data, 5, 2, seed=0).users.tolist()) == {1}


@pytest.mark.parametrize("mode", ["S", "R"])
def test_coverage_and_count_bound_on_synthetic(mode):
    data = split(make_synthetic(100, 300, 10, seed=1), seed=1)
    s = build_schedule(data, mode, 5, 5, seed=0)
    assert covered(s, data)
    assert len(s) <= sum(len(h) for h in data.training_positives())


def test_r_mode_seed_sensitivity():
    data = one_user(20)
    a = schedule_R(data, 5, 3, seed=0)
    b = schedule_R(data, 5, 3, seed=1)
    assert a.targets.tolist() != b.targets.tolist()
    assert covered(a, data) and covered(b, data)


def test_s_mode_targets_fixed_across_epochs_negatives_fresh():
    data = one_user(10, num_items=200)
    a = schedule_S(data, 5, 5, seed=0, epoch=0)
    b = schedule_S(data, 5, 5, seed=0, epoch=1)
    assert np.array_equal(a.targets, b.targets)
    assert not np.array_equal(a.negatives, b.negatives)


def test_negatives_never_hit_positives():
    data = make_synthetic(200, 400, 10, seed=2)
    hist = data.training_positives()
    total = 0
    for epoch in range(20):
        s = schedule_R(data, 5, 5, seed=3, epoch=epoch)
        for u, g in zip(s.users, s.negatives):
            assert not set(g.tolist()) & set(hist[u].tolist())
            assert len(set(g.tolist())) == 5
        total += len(s)
    assert total >= 10_000


@pytest.mark.parametrize("mode", ["S", "R"])
def test_determinism(mode, small_data):
    a = build_schedule(small_data, mode, 4, 3, seed=9)
    b = build_schedule(small_data, mode, 4, 3, seed=9)
    assert a.users.tobytes() == b.users.tobytes()
    assert a.targets.tobytes() == b.targets.tobytes()
    assert a.negatives.tobytes() == b.negatives.tobytes()


def test_instances_view_matches_arrays(small_data):
    s = schedule_S(small_data, 3, 2, seed=0)
    inst = s.instances[0]
    assert inst.targets == tuple(s.targets[0].tolist())
    assert inst.items == tuple(s.items[0].tolist())


def test_preconditions(small_data):
    with pytest.raises(ContractViolation):
        schedule_S(small_data, 1, 5, seed=0)
    with pytest.raises(ContractViolation):
        build_schedule(small_data, "X", 5, 5, seed=0)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.lists(st.integers(0, 59), min_size=0, max_size=25, unique=True), min_size=1, max_size=6),
    st.integers(2, 6),
    st.integers(1, 6),
    st.sampled_from(["S", "R"]),
    st.integers(0, 2**16),
)
def test_schedule_properties(histories, k, n, mode, seed):
    data = InteractionDataset(len(histories), 60, 1, histories, np.zeros(60, dtype=int))
    s = build_schedule(data, mode, k, n, seed)
    assert covered(s, data)
    assert len(s) <= sum(len(h) for h in histories)
    for u, t, g in zip(s.users, s.targets, s.negatives):
        assert not set(t.tolist()) & set(g.tolist())
        assert set(t.tolist()) <= set(histories[u])
        assert len(set(g.tolist())) == n


def test_sample_negatives_membership():
    keys = train_positive_keys([np.arange(8)], 10)
    out = sample_negatives(np.random.default_rng(0), np.zeros(500, dtype=int), 2, 10, keys)
    assert out.min() >= 8
    assert np.all(out[:, 0] != out[:, 1])
