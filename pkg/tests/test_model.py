import json

import numpy as np
import pytest

from lkp.data import make_synthetic, split
from lkp.diversity import DiversityKernel, build_diverse_training_pairs, train_diversity_kernel
from lkp.errors import ContractViolation, DataError
from lkp.evaluation import validation_ndcg
from lkp.model import (
    VARIANTS,
    AdamHyper,
    AdamState,
    EmbeddingTable,
    TrainConfig,
    adam_step,
    init_embeddings,
    train,
)


@pytest.fixture(scope="module")
def block_data():
    return split(make_synthetic(200, 300, 10, seed=1), seed=1)


@pytest.fixture(scope="module")
def block_kernel(block_data):
    pairs = build_diverse_training_pairs(block_data, seed=1)
    return train_diversity_kernel(pairs, block_data.num_items, rank=16, epochs=3, seed=1)


def test_init_determinism_and_statistics():
    a = init_embeddings(50, 80, 16, seed=3)
    b = init_embeddings(50, 80, 16, seed=3)
    c = init_embeddings(50, 80, 16, seed=4)
    assert a.to_bytes() == b.to_bytes()
    assert a.to_bytes() != c.to_bytes()
    big = init_embeddings(1000, 1000, 500, seed=0)
    draws = np.concatenate([big.user_vecs.ravel(), big.item_vecs.ravel()])
    assert draws.size == 10**6
    assert abs(draws.mean()) < 3 * 0.01 / np.sqrt(draws.size)
    assert draws.std() == pytest.approx(0.01, rel=0.01)


def test_embedding_contract():
    with pytest.raises(ContractViolation):
        EmbeddingTable(np.zeros((2, 3)), np.zeros((2, 4)))
    with pytest.raises(ContractViolation):
        EmbeddingTable(np.full((2, 3), np.nan), np.zeros((2, 3)))
    with pytest.raises(ContractViolation):
        init_embeddings(0, 3)


def test_checkpoint_round_trip(tmp_path):
    e = init_embeddings(4, 6, 3, seed=1)
    e.save(tmp_path / "m.bin")
    raw = (tmp_path / "m.bin").read_bytes()
    assert raw.startswith(b"lkp-model v1 4 6 3\n")
    assert len(raw) == len(b"lkp-model v1 4 6 3\n") + 8 * 3 * 10
    back = EmbeddingTable.load(tmp_path / "m.bin")
    assert back.to_bytes() == e.to_bytes()
    (tmp_path / "bad.bin").write_bytes(b"nope\n")
    with pytest.raises(DataError):
        EmbeddingTable.load(tmp_path / "bad.bin")


def test_adam_zero_gradient_is_a_no_op():
    p = np.array([1.0, -2.0])
    state = AdamState.zeros_like([p])
    adam_step([p], [np.zeros(2)], state, AdamHyper(l2=0.0))
    assert p.tolist() == [1.0, -2.0]


def test_adam_moves_against_gradient_sign():
    p = np.zeros(3)
    state = AdamState.zeros_like([p])
    g = np.array([2.0, -0.5, 1e-3])
    for _ in range(100):
        adam_step([p], [g], state, AdamHyper(learning_rate=1e-2, l2=0.0))
    assert np.all(np.sign(p) == -np.sign(g))


def test_adam_quadratic_converges():
    p = np.array([0.0])
    state = AdamState.zeros_like([p])
    for _ in range(500):
        adam_step([p], [2.0 * (p - 1.5)], state, AdamHyper(learning_rate=1e-2, l2=0.0))
    assert abs(p[0] - 1.5) < 1e-3


def test_adam_first_step_has_unit_magnitude():
    p = np.array([0.0, 0.0])
    state = AdamState.zeros_like([p])
    adam_step([p], [np.array([1e-4, -7.0])], state, AdamHyper(learning_rate=0.1, l2=0.0))
    assert np.allclose(p, [-0.1, 0.1], rtol=1e-3)


def test_adam_l2_added_to_gradient():
    p = np.array([2.0])
    state = AdamState.zeros_like([p])
    adam_step([p], [np.zeros(1)], state, AdamHyper(learning_rate=0.1, l2=1e-4))
    assert p[0] == pytest.approx(1.9, abs=1e-4)


def test_adam_skips_non_finite_gradients():
    p = np.array([1.0])
    state = AdamState.zeros_like([p])
    assert not adam_step([p], [np.array([np.inf])], state, AdamHyper())
    assert state.skipped == 1 and state.t == 0 and p[0] == 1.0
    with pytest.raises(ContractViolation):
        adam_step([p], [np.zeros(2)], state, AdamHyper())


def test_variants_map():
    assert VARIANTS["NPS"] == ("lkp_nps", "S", "pretrained")
    assert VARIANTS["PSE"] == ("lkp_ps", "S", "gaussian")
    cfg = TrainConfig.variant("NPR", epochs=3)
    assert (cfg.objective, cfg.sampler, cfg.kernel_mode, cfg.epochs) == ("lkp_nps", "R", "pretrained", 3)
    with pytest.raises(ContractViolation):
        TrainConfig.variant("XYZ")


def test_config_contract():
    with pytest.raises(ContractViolation):
        TrainConfig(objective="lkp_nps", k=5, n=4)
    with pytest.raises(ContractViolation):
        TrainConfig(objective="nope")
    with pytest.raises(ContractViolation):
        TrainConfig(objective="lkp_ps", k=8, n=8)
    TrainConfig(objective="lkp_ps", k=5, n=4)


def test_epochs_zero_returns_initialization(block_data, block_kernel):
    r = train(TrainConfig(epochs=0, d=8, seed=2), block_data, block_kernel)
    assert r.model.to_bytes() == init_embeddings(block_data.num_users, block_data.num_items, 8, 2).to_bytes()
    assert r.best_epoch == 0 and len(r.log) == 1


def test_pretrained_mode_needs_matching_frozen_kernel(block_data, block_kernel):
    with pytest.raises(ContractViolation):
        train(TrainConfig(epochs=1, d=8), block_data, None)
    unfrozen = DiversityKernel("pretrained", V=block_kernel.V, frozen=False)
    with pytest.raises(ContractViolation):
        train(TrainConfig(epochs=1, d=8), block_data, unfrozen)
    with pytest.raises(ContractViolation):
        train(TrainConfig(epochs=1, d=8), block_data, DiversityKernel.identity(5))


@pytest.mark.parametrize("variant", ["NPS", "PR", "NPSE"])
def test_training_is_deterministic(block_data, block_kernel, variant, tmp_path):
    cfg = TrainConfig.variant(variant, epochs=3, d=8, eval_interval=1, seed=5)
    a = train(cfg, block_data, block_kernel)
    b = train(cfg, block_data, block_kernel)
    assert a.log_jsonl(include_wall=False) == b.log_jsonl(include_wall=False)
    assert a.final.to_bytes() == b.final.to_bytes()
    assert a.model.to_bytes() == b.model.to_bytes()


@pytest.mark.parametrize("objective", ["bpr", "bce"])
def test_pointwise_training_deterministic(block_data, objective):
    cfg = TrainConfig(objective=objective, epochs=2, d=8, seed=1)
    assert train(cfg, block_data).final.to_bytes() == train(cfg, block_data).final.to_bytes()


def test_log_records(block_data, block_kernel):
    r = train(TrainConfig(epochs=4, d=8, eval_interval=2), block_data, block_kernel)
    rows = [json.loads(line) for line in r.log_jsonl().splitlines()]
    assert [row["epoch"] for row in rows] == [0, 1, 2, 3, 4]
    assert all(set(row) == {"epoch", "loss", "val_ndcg5", "wall_ms"} for row in rows)
    assert rows[1]["val_ndcg5"] is None and rows[2]["val_ndcg5"] is not None
    assert all(np.isfinite(row["loss"]) for row in rows[1:])


def test_nps_learns_on_block_data(block_data, block_kernel):
    cfg = TrainConfig.variant("NPS", epochs=50, d=16, learning_rate=1e-2, eval_interval=50, patience=0, seed=0)
    r = train(cfg, block_data, block_kernel)
    assert r.log[-1]["epoch"] == 50
    assert r.log[-1]["val_ndcg5"] > r.log[0]["val_ndcg5"]
    # best-epoch selection never falls below the initialization
    assert validation_ndcg(r.model, block_data) >= r.log[0]["val_ndcg5"]


def test_early_stopping_counts_evaluations(block_data, block_kernel):
    cfg = TrainConfig(objective="bpr", epochs=40, d=4, learning_rate=1.0, eval_interval=1, patience=2, seed=0)
    r = train(cfg, block_data)
    assert r.log[-1]["epoch"] <= 40
    vals = [row["val_ndcg5"] for row in r.log if row["val_ndcg5"] is not None]
    if r.log[-1]["epoch"] < 40:
        assert max(vals[-2:]) <= r.best_val_ndcg5


def test_trends_recorded(block_data, block_kernel):
    cfg = TrainConfig.variant("PS", epochs=2, d=8, trend_epochs=(0, 2), trend_instances=10)
    r = train(cfg, block_data, block_kernel)
    assert [t.epoch for t in r.trends] == [0, 2]
    for t in r.trends:
        assert np.allclose(t.per_instance_mass, 1.0, atol=1e-8)
