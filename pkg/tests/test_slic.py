from __future__ import annotations

import numpy as np
import pytest
from scipy import ndimage

from r2o.imaging import rgb_to_lab
from r2o.slic import (
    PriorConfig,
    SlicConfig,
    compute_prior,
    enforce_connectivity,
    grid_prior,
    grid_shape,
    slic_segment,
)


def _two_colors(h=32, w=32) -> np.ndarray:
    img = np.zeros((h, w, 3))
    img[:, : w // 2] = (1.0, 0.0, 0.0)
    img[:, w // 2 :] = (0.0, 0.0, 1.0)
    return img


def _assert_connected(labels):
    for lab in np.unique(labels):
        _, n = ndimage.label(labels == lab)
        assert n == 1


def test_grid_shape():
    assert grid_shape(64, 64, 100) == (10, 10)
    ny, nx = grid_shape(10, 40, 16)
    assert ny * nx <= 16 and nx > ny


def test_regions_follow_color_edges():
    img = _two_colors()
    res = slic_segment(rgb_to_lab(img), SlicConfig(n_segments=16))
    labels = res.labels
    assert labels.shape == (32, 32)
    assert res.n_regions == labels.max() + 1
    np.testing.assert_array_equal(np.unique(labels), np.arange(res.n_regions))
    for lab in range(res.n_regions):
        cols = np.nonzero(labels == lab)[1]
        assert (cols < 16).all() or (cols >= 16).all()
    _assert_connected(labels)


def test_slic_is_deterministic(rng):
    lab = rgb_to_lab(rng.random((20, 20, 3)))
    a = slic_segment(lab, SlicConfig(n_segments=9))
    b = slic_segment(lab, SlicConfig(n_segments=9))
    np.testing.assert_array_equal(a.labels, b.labels)
    _assert_connected(a.labels)


def test_more_segments_than_pixels():
    res = slic_segment(rgb_to_lab(np.full((3, 3, 3), 0.5)), SlicConfig(n_segments=50))
    assert 1 <= res.n_regions <= 9


def test_enforce_connectivity_merges_islands():
    labels = np.zeros((5, 5), dtype=np.int64)
    labels[:, 3:] = 1
    labels[2, 1] = 1
    out = enforce_connectivity(labels, min_size=2)
    assert out.max() == 1
    assert out[2, 1] == out[0, 0]
    _assert_connected(out)


def test_grid_prior():
    prior = grid_prior(4, 6, 2)
    assert prior.shape == (4, 6)
    np.testing.assert_array_equal(np.unique(prior), [0, 1, 2, 3])
    assert prior[0, 0] == 0 and prior[3, 5] == 3
    out = compute_prior(np.zeros((4, 6, 3)), PriorConfig(kind="grid", grid_cells=2), SlicConfig())
    np.testing.assert_array_equal(out, prior)


def test_prior_config_validation():
    with pytest.raises(ValueError):
        PriorConfig(kind="watershed")
    with pytest.raises(ValueError):
        SlicConfig(n_segments=0)
