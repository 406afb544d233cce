import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lkp.diversity import DiversityKernel
from lkp.dpp import GroundSetInstance
from lkp.evaluation import (
    EvalReport,
    compute_metrics,
    evaluate,
    expected_group_size,
    f_score,
    probability_trend,
    rank_users,
    recommend_top_n,
    trends_to_csv,
)
from lkp.model import EmbeddingTable, TrainConfig, init_embeddings, train
from lkp.oracles import F_TABLE_ROWS


def test_all_ties_break_by_id():
    emb = EmbeddingTable(np.zeros((1, 3)), np.zeros((30, 3)))
    assert recommend_top_n(emb, 0, 5) == [0, 1, 2, 3, 4]
    assert recommend_top_n(emb, 0, 5, exclude={1, 3}) == [0, 2, 4, 5, 6]


def test_infinite_score_is_clamped_and_ranks_first():
    items = np.zeros((6, 2))
    items[4] = [1e308, 0.0]
    items[2] = [1.0, 0.0]
    emb = EmbeddingTable(np.array([[10.0, 0.0]]), items)
    assert np.isinf(emb.scores(0)[4])
    assert recommend_top_n(emb, 0, 3) == [4, 2, 0]


def test_orthogonal_shift_preserves_ranking(rng):
    items = np.hstack([rng.normal(size=(50, 4)), np.zeros((50, 1))])
    user = rng.normal(size=(1, 5))
    a = recommend_top_n(EmbeddingTable(user, items), 0, 10)
    user[0, 4] += 123.0
    assert recommend_top_n(EmbeddingTable(user, items), 0, 10) == a


def test_ranking_matches_full_sort(rng):
    emb = EmbeddingTable(rng.normal(size=(20, 4)), np.round(rng.normal(size=(40, 4)), 1))
    ex = [rng.choice(40, 5, replace=False) for _ in range(20)]
    got = rank_users(emb, np.arange(20), ex, 10)
    for u in range(20):
        s = emb.scores(u)
        s[ex[u]] = -np.inf
        ref = sorted(range(40), key=lambda i: (-s[i], i))[:10]
        assert got[u].tolist() == ref


def test_recommend_precondition():
    with pytest.raises(ValueError):
        recommend_top_n(EmbeddingTable(np.zeros((1, 1)), np.zeros((3, 1))), 0, 0)


def test_single_hit_at_rank_one():
    r, n, cc, f = compute_metrics([7, 1, 2, 3, 4], [7], np.zeros(10, dtype=int), 4, 5)
    assert (r, n, cc) == (1.0, 1.0, 0.25)
    assert f == pytest.approx(f_score(1.0, 1.0, 0.25))


def test_ndcg_hand_value():
    # hits at ranks 2 and 4, three test items
    r, n, _, _ = compute_metrics([9, 0, 8, 1, 7], [0, 1, 2], np.zeros(10, dtype=int), 1, 5)
    dcg = 1 / math.log2(3) + 1 / math.log2(5)
    idcg = 1 + 1 / math.log2(3) + 1 / math.log2(4)
    assert r == pytest.approx(2 / 3)
    assert n == pytest.approx(dcg / idcg)


def test_empty_test_set_is_excluded():
    assert compute_metrics([1, 2], [], np.zeros(3, dtype=int), 1, 2) is None


def test_cutoff_precondition():
    with pytest.raises(ValueError):
        compute_metrics([1, 2], [1], np.zeros(3, dtype=int), 1, 3)


@pytest.mark.parametrize("name", sorted(F_TABLE_ROWS))
def test_f_reproduces_table_rows(name):
    re, nd, cc, f = F_TABLE_ROWS[name]
    assert abs(f_score(re, nd, cc) - f) <= 5e-4


def test_f_zero_when_everything_is_zero():
    assert f_score(0.0, 0.0, 0.0) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**16), st.integers(1, 8), st.integers(1, 6))
def test_metric_properties(seed, num_test, total_cats):
    rng = np.random.default_rng(seed)
    cats = rng.integers(0, total_cats, size=40)
    recs = rng.permutation(40)[:20]
    test = rng.choice(40, num_test, replace=False)
    prev = (0.0, 0.0)
    for N in range(1, 21):
        r, n, cc, f = compute_metrics(recs, test, cats, total_cats, N)
        for m in (r, n, cc, f):
            assert 0.0 <= m <= 1.0 + 1e-12
        assert cc <= min(N, total_cats) / total_cats + 1e-12
        assert r >= prev[0] - 1e-12
        assert f == pytest.approx(f_score(r, n, cc))
        prev = (r, n)


def test_recall_monotone_ndcg_needs_fixed_ideal():
    # ndcg can drop with N once IDCG grows; recall never does
    recs = [0, 9, 8, 7, 6]
    vals = [compute_metrics(recs, [0, 1, 2], np.zeros(10, dtype=int), 1, N) for N in (1, 3, 5)]
    assert vals[0][0] <= vals[1][0] <= vals[2][0]


def test_dcg_monotone_in_cutoff():
    rng = np.random.default_rng(0)
    for _ in range(50):
        recs = rng.permutation(30)
        test = rng.choice(30, 20, replace=False)
        dcg = [sum(1 / math.log2(i + 2) for i in range(N) if recs[i] in test) for N in (5, 10, 20)]
        assert dcg[0] <= dcg[1] <= dcg[2]


def test_evaluate_report(small_data):
    emb = init_embeddings(small_data.num_users, small_data.num_items, 8, seed=0)
    rep = evaluate(emb, small_data)
    assert set(rep.metrics) == {5, 10, 20}
    assert rep.num_users_evaluated == sum(len(t) > 0 for t in small_data.test)
    for N, m in rep.metrics.items():
        assert m["f"] == pytest.approx(f_score(m["recall"], m["ndcg"], m["cc"]))
        assert all(0 <= v <= 1 for v in m.values())
    back = EvalReport.from_dict(rep.to_dict())
    assert back.metrics == rep.metrics
    assert rep.to_json().startswith("{")


def test_evaluate_excludes_train_and_valid(small_data):
    emb = init_embeddings(small_data.num_users, small_data.num_items, 8, seed=0)
    users = np.arange(small_data.num_users)
    excl = [np.concatenate([small_data.train[u], small_data.valid[u]]) for u in users]
    ranked = rank_users(emb, users, excl, 20)
    for u in users:
        assert not set(ranked[u].tolist()) & set(excl[u].tolist())


def test_evaluate_perfect_model_scores_one():
    from lkp.data import InteractionDataset

    # item i is in the test split for user i only; embeddings are one-hot
    n = 6
    d = InteractionDataset(n, n, 2, [[i] for i in range(n)], np.arange(n) % 2,
                           train=[[] for _ in range(n)], valid=[[] for _ in range(n)], test=[[i] for i in range(n)])
    emb = EmbeddingTable(np.eye(n), np.eye(n))
    rep = evaluate(emb, d, (5,))
    assert rep[5]["recall"] == 1.0 and rep[5]["ndcg"] == 1.0 and rep[5]["cc"] == 1.0


def uniform_instances(count, k=5, n=5):
    return [GroundSetInstance(0, tuple(range(k)), tuple(range(k, k + n))) for _ in range(count)]


def test_uniform_trend_is_one_over_252():
    emb = EmbeddingTable(np.zeros((1, 3)), np.zeros((10, 3)))
    t = probability_trend(emb, DiversityKernel.identity(10), uniform_instances(3), 5)
    assert np.allclose(t.group_means, 1 / 252, atol=1e-12)
    assert t.group_sizes == [1, 25, 100, 100, 25, 1]
    assert np.allclose(t.per_instance_mass, 1.0, atol=1e-8)


def test_group_sizes():
    assert [expected_group_size(5, 5, g) for g in range(6)] == [1, 25, 100, 100, 25, 1]
    assert sum(expected_group_size(3, 4, g) for g in range(4)) == math.comb(7, 3)


def test_trend_normalizes_per_instance(rng):
    emb = EmbeddingTable(rng.normal(0, 0.5, (4, 6)), rng.normal(0, 0.5, (30, 6)))
    K = DiversityKernel("pretrained", V=rng.normal(size=(30, 6)))
    insts = []
    for _ in range(8):
        items = rng.choice(30, 7, replace=False)
        insts.append(GroundSetInstance(int(rng.integers(4)), tuple(items[:3]), tuple(items[3:])))
    t = probability_trend(emb, K, insts, 3)
    assert np.allclose(t.per_instance_mass, 1.0, atol=1e-8)
    assert all(0 < p < 1 for p in t.group_means)


def test_trend_rejects_mixed_shapes():
    emb = EmbeddingTable(np.zeros((1, 2)), np.zeros((10, 2)))
    mixed = [GroundSetInstance(0, (0, 1), (2, 3)), GroundSetInstance(0, (0, 1, 2), (3, 4))]
    with pytest.raises(ValueError):
        probability_trend(emb, DiversityKernel.identity(10), mixed, 2)
    with pytest.raises(ValueError):
        probability_trend(emb, DiversityKernel.identity(10), [], 2)


def test_trained_ps_favours_target_rich_subsets(small_data):
    from lkp.diversity import build_diverse_training_pairs, train_diversity_kernel

    K = train_diversity_kernel(build_diverse_training_pairs(small_data), small_data.num_items, rank=16, epochs=2)
    cfg = TrainConfig.variant("PS", epochs=15, d=16, learning_rate=1e-2, trend_epochs=(15,), trend_instances=50)
    t = train(cfg, small_data, K).trends[-1]
    assert t.group_means[-1] > t.group_means[0]


def test_trend_csv():
    emb = EmbeddingTable(np.zeros((1, 3)), np.zeros((10, 3)))
    t = probability_trend(emb, DiversityKernel.identity(10), uniform_instances(1), 5, epoch=7)
    lines = trends_to_csv([t]).splitlines()
    assert lines[0] == "epoch,target_count,mean_prob"
    assert len(lines) == 7 and lines[1].startswith("7,0,")
    assert t.to_dict()["groups"][5]["num_subsets"] == 1
