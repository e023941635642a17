from __future__ import annotations

import numpy as np
import pytest

from conftest import numeric_grad, rel_error, sample_indices
from r2o.encoder import HeadConfig, make_pair
from r2o.objective import (
    DegenerateBatchError,
    ObjectiveConfig,
    byol_pair_loss,
    mask_pool,
    masked_byol_step,
    symmetric_masked_loss,
    valid_pairs,
)
from r2o.refine import RefinedMask


def _halves(vertical: bool, extra: int | None = None) -> RefinedMask:
    grid = np.zeros((4, 4), dtype=np.int64)
    if vertical:
        grid[:, 2:] = 1
    else:
        grid[2:, :] = 1
    if extra is not None:
        grid[0, 0] = extra
    return RefinedMask.from_grid(grid)


def test_pair_loss_reference_values(rng):
    z = rng.normal(size=6)
    assert byol_pair_loss(3.0 * z, z) == pytest.approx(0.0, abs=1e-12)
    assert byol_pair_loss(-z, z) == pytest.approx(4.0, abs=1e-12)
    assert byol_pair_loss(np.array([1.0, 0.0]), np.array([0.0, 2.0])) == pytest.approx(2.0)
    q = rng.normal(size=6)
    assert byol_pair_loss(q, 7.5 * z) == pytest.approx(byol_pair_loss(q, z), abs=1e-12)
    assert byol_pair_loss(np.zeros(6), z) == pytest.approx(2.0)


def test_valid_pairs():
    a = RefinedMask.from_grid(np.array([[0, 1], [2, 2]]))
    b = RefinedMask.from_grid(np.array([[1, 2], [5, 5]]))
    np.testing.assert_array_equal(valid_pairs(a, b), [1, 2])
    np.testing.assert_array_equal(valid_pairs(a, a), [0, 1, 2])
    c = RefinedMask.from_grid(np.array([[7, 8], [8, 7]]))
    assert valid_pairs(a, c).size == 0


def test_mask_pool(rng):
    feats = rng.normal(size=(3, 3, 5))
    np.testing.assert_allclose(mask_pool(feats, np.zeros((3, 3), int), 0),
                               feats.reshape(-1, 5).mean(0))
    grid = np.zeros((3, 3), int)
    grid[2, 1] = 4
    np.testing.assert_allclose(mask_pool(feats, grid, 4), feats[2, 1])
    const = np.full((3, 3, 5), -0.5)
    np.testing.assert_allclose(mask_pool(const, grid, 0), -0.5)
    with pytest.raises(ValueError):
        mask_pool(feats, grid, 9)


@pytest.fixture
def pair(tiny_encoder, tiny_heads):
    return make_pair(tiny_encoder, tiny_heads, seed=0)


def _feats(rng):
    return [np.abs(rng.normal(size=(2, 4, 4, 8))) for _ in range(4)]


def test_loss_is_bounded_and_view_symmetric(pair, rng):
    of1, of2, tf1, tf2 = _feats(rng)
    m1 = [_halves(True), _halves(True, extra=2)]
    m2 = [_halves(False), _halves(False)]
    report, _ = symmetric_masked_loss(pair.online, pair.target, of1, of2, tf1, tf2, m1, m2)
    assert report.n_pairs == 8
    assert all(0.0 <= p.loss <= 4.0 for p in report.per_pair)
    assert 0.0 <= report.total <= 4.0
    assert report.total == pytest.approx(np.mean([p.loss for p in report.per_pair]), abs=1e-12)

    swapped, _ = symmetric_masked_loss(pair.online, pair.target, of2, of1, tf2, tf1, m2, m1)
    assert swapped.total == report.total


def test_twin_networks_with_identity_predictor_give_zero(tiny_encoder, rng):
    twins = make_pair(tiny_encoder, HeadConfig(hidden=8, out=4, predictor="identity"), seed=2)
    f = np.abs(rng.normal(size=(2, 4, 4, 8)))
    masks = [_halves(True), _halves(False)]
    report, _ = symmetric_masked_loss(twins.online, twins.target, f, f, f, f, masks, masks)
    assert report.total == pytest.approx(0.0, abs=1e-12)


def test_single_pair_is_two_term_mean(pair, rng):
    of1, of2, tf1, tf2 = (x[:1] for x in _feats(rng))
    only = [RefinedMask.from_grid(np.zeros((4, 4), int))]
    report, _ = symmetric_masked_loss(pair.online, pair.target, of1, of2, tf1, tf2, only, only)
    assert report.n_pairs == 2
    assert report.total == pytest.approx((report.per_pair[0].loss + report.per_pair[1].loss) / 2)


def test_per_image_mean(pair, rng):
    of1, of2, tf1, tf2 = _feats(rng)
    m1 = [_halves(True), RefinedMask.from_grid(np.zeros((4, 4), int))]
    m2 = [_halves(True), _halves(False)]
    cfg = ObjectiveConfig(per_image_mean=True)
    report, _ = symmetric_masked_loss(pair.online, pair.target, of1, of2, tf1, tf2, m1, m2, cfg)
    per_image = [np.mean([p.loss for p in report.per_pair if p.image == b]) for b in (0, 1)]
    assert report.n_pairs == 6
    assert report.total == pytest.approx(np.mean(per_image), abs=1e-12)


def test_no_shared_cluster_is_degenerate(pair, rng):
    of1, of2, tf1, tf2 = _feats(rng)
    m1 = [RefinedMask.from_grid(np.zeros((4, 4), int))] * 2
    m2 = [RefinedMask.from_grid(np.ones((4, 4), int))] * 2
    with pytest.raises(DegenerateBatchError):
        symmetric_masked_loss(pair.online, pair.target, of1, of2, tf1, tf2, m1, m2)


def test_step_gradients_match_finite_differences(pair, rng):
    online, target = pair.online, pair.target
    v1, v2 = rng.random((2, 16, 16, 3)), rng.random((2, 16, 16, 3))
    m1 = [_halves(True), _halves(True, extra=2)]
    m2 = [_halves(False), _halves(True)]
    result = masked_byol_step(online, target, v1, v2, m1, m2)
    assert set(result.grads) == set(online.params)
    for name, g in result.target_grads.items():
        assert not g.any(), name

    def run():
        return masked_byol_step(online, target, v1, v2, m1, m2)

    base = [m.copy() for m in result.relu_masks]
    checked = 0
    for name, param in online.params.items():
        for idx in sample_indices(param.shape, 2, rng):
            old = param[idx]
            param[idx] = old + 1e-5
            plus = run().relu_masks
            param[idx] = old - 1e-5
            minus = run().relu_masks
            param[idx] = old
            if any(not (np.array_equal(a, b) and np.array_equal(a, c))
                   for a, b, c in zip(base, plus, minus)):
                continue
            numeric = numeric_grad(lambda: run().report.total, param, idx)
            assert rel_error(result.grads[name][idx], numeric) < 1e-4, name
            checked += 1
    assert checked > 30
