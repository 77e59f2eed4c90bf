import numpy as np
import pytest

from sparsekit.model import ModelConfig, build_model
from sparsekit.pruning import (MaskSet, SparsitySchedule, apply_masks,
                               lock_pattern, masked_grad, prune_step,
                               sparsity_report, target_sparsity)
from sparsekit.tensor import ContractError


SCHED = SparsitySchedule(initial_sparsity=0.0, final_sparsity=0.9,
                         start_step=0, policy_end_step=100, end_step=100, interval=1)


def tiny_model(**kw):
    cfg = ModelConfig(num_layers=1, hidden=8, heads=2, ffn_dim=16, vocab=16,
                      max_seq=8, has_pooler=False, head_kind="mlm", **kw)
    return build_model(cfg, seed=0)


def test_target_sparsity_boundaries():
    assert target_sparsity(SCHED, 0) == 0.0
    assert target_sparsity(SCHED, 100) == 0.9
    assert target_sparsity(SCHED, 1000) == 0.9


def test_target_sparsity_midpoint():
    assert target_sparsity(SCHED, 50) == pytest.approx(0.7875, abs=1e-12)


def test_target_sparsity_monotone_and_continuous():
    vals = [target_sparsity(SCHED, t) for t in range(0, 201)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    # continuity at the window edges
    assert abs(target_sparsity(SCHED, 0) - 0.0) < 1e-12
    assert abs(target_sparsity(SCHED, 100) - 0.9) < 1e-12


def test_schedule_invariants():
    with pytest.raises(ContractError):
        SparsitySchedule(0.5, 0.4, 0, 10, 20, 1)
    with pytest.raises(ContractError):
        SparsitySchedule(0.0, 0.9, 10, 5, 20, 1)
    with pytest.raises(ContractError):
        SparsitySchedule(0.0, 0.9, 0, 10, 20, 0)


def _model_with_weight(values):
    model = tiny_model()
    name = model.prunable_parameters()[0]
    flat = np.zeros(model.parameters[name].size, dtype=np.float32)
    flat[:len(values)] = values
    # keep the rest large so only the planted prefix competes
    flat[len(values):] = 100.0
    model.parameters[name].values = flat.reshape(model.parameters[name].shape)
    return model, name


def test_prune_step_example():
    w = np.array([0.1, -0.5, 0.3, 0.05], dtype=np.float32)
    model, name = _model_with_weight(w)
    n = model.parameters[name].size
    ratio = 2 / n  # prune exactly two entries: the two smallest overall
    masks = prune_step(model, None, ratio)
    np.testing.assert_array_equal(masks[name].reshape(-1)[:4], [0, 1, 1, 0])
    np.testing.assert_array_equal(model.parameters[name].values.reshape(-1)[:4],
                                  np.array([0, -0.5, 0.3, 0], dtype=np.float32))


def test_prune_ratio_zero_is_identity():
    model = tiny_model()
    name = model.prunable_parameters()[0]
    before = model.parameters[name].values.copy()
    masks = prune_step(model, None, 0.0)
    assert masks[name].all()
    np.testing.assert_array_equal(model.parameters[name].values, before)


def test_prune_tie_break_lowest_index_first():
    w = np.array([0.2, -0.2, 0.3], dtype=np.float32)
    model, name = _model_with_weight(w)
    n = model.parameters[name].size
    masks = prune_step(model, None, 1 / n)
    np.testing.assert_array_equal(masks[name].reshape(-1)[:3], [0, 1, 1])


def test_prune_ratio_out_of_range():
    with pytest.raises(ContractError):
        prune_step(tiny_model(), None, 1.5)


def test_prune_matches_bruteforce_oracle():
    rng = np.random.Generator(np.random.PCG64(11))
    model = tiny_model()
    for trial in range(20):
        name = model.prunable_parameters()[trial % 6]
        p = model.parameters[name]
        w = rng.standard_normal(p.shape).astype(np.float32)
        # inject duplicates to exercise the tie-break
        w.reshape(-1)[rng.integers(0, w.size, size=8)] = 0.25
        p.values = w.copy()
        ratio = float(rng.uniform(0, 1))
        masks = prune_step(model, None, ratio)
        k = int(np.floor(ratio * w.size))
        # oracle: stable sort by (|w|, flat index)
        order = sorted(range(w.size), key=lambda i: (abs(w.reshape(-1)[i]), i))
        pruned = set(order[:k])
        got = set(np.flatnonzero(masks[name].reshape(-1) == 0))
        assert got == pruned


def test_prune_idempotent_at_fixed_ratio():
    model = tiny_model()
    m1 = prune_step(model, None, 0.5)
    w_after = {n: model.parameters[n].values.copy() for n in model.prunable_parameters()}
    m2 = prune_step(model, m1, 0.5)
    for name in m1.names():
        np.testing.assert_array_equal(m1[name], m2[name])
        np.testing.assert_array_equal(model.parameters[name].values, w_after[name])


def test_apply_masks():
    model = tiny_model()
    name = model.prunable_parameters()[0]
    ones = MaskSet({name: np.ones_like(model.parameters[name].values)})
    before = model.parameters[name].values.copy()
    apply_masks(model, ones)
    np.testing.assert_array_equal(model.parameters[name].values, before)
    zeros = MaskSet({name: np.zeros_like(before)})
    apply_masks(model, zeros)
    assert (model.parameters[name].values == 0).all()


def test_apply_masks_unknown_param():
    with pytest.raises(KeyError):
        apply_masks(tiny_model(), MaskSet({"nope": np.ones(3)}))


def test_lock_pattern():
    model = tiny_model()
    name = model.prunable_parameters()[0]
    flat = model.parameters[name].values.reshape(-1)
    flat[:3] = [0.0, 2.0, -3.0]
    masks = lock_pattern(model)
    np.testing.assert_array_equal(masks[name].reshape(-1)[:3], [0, 1, 1])


def test_lock_pattern_dense_all_ones():
    model = tiny_model()
    for n in model.prunable_parameters():
        assert (model.parameters[n].values != 0).all()
    masks = lock_pattern(model)
    for n in masks.names():
        assert masks[n].all()


def test_lock_pattern_sparsity_matches():
    model = tiny_model()
    prune_step(model, None, 0.9)
    masks = lock_pattern(model)
    for n in masks.names():
        size = masks[n].size
        assert (masks[n] == 0).sum() == int(np.floor(0.9 * size))


def test_masked_grad():
    np.testing.assert_array_equal(
        masked_grad(np.array([1.0, 2.0, 3.0]), np.array([1.0, 0.0, 1.0])), [1, 0, 3])
    g = np.array([1.0, 2.0])
    np.testing.assert_array_equal(masked_grad(g, np.ones(2)), g)
    with pytest.raises(ContractError):
        masked_grad(np.ones(3), np.ones(4))


def test_sparsity_report():
    model = tiny_model()
    rep = sparsity_report(model)
    assert rep.aggregate == 0.0
    assert set(rep.per_tensor) == set(model.prunable_parameters())
    assert "embeddings.token" not in rep.per_tensor

    prune_step(model, None, 0.85)
    rep = sparsity_report(model)
    for name, s in rep.per_tensor.items():
        n = model.parameters[name].size
        assert s == int(np.floor(0.85 * n)) / n
    assert abs(rep.aggregate - 0.85) < 0.01
    assert rep.nonzero_count == rep.total_count - sum(
        int(np.floor(0.85 * model.parameters[n].size)) for n in rep.per_tensor)
