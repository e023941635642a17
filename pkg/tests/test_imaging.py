from __future__ import annotations

import numpy as np
import pytest

from r2o.imaging import (
    check_image,
    colorize_labels,
    load_image,
    load_label_map,
    relabel_contiguous,
    resize_bilinear,
    resize_nearest,
    rgb_to_lab,
    sample_region,
    save_image,
    save_label_map,
)


def test_lab_reference_points():
    white = rgb_to_lab(np.ones((1, 1, 3)))[0, 0]
    np.testing.assert_allclose(white, [100.0, 0.0, 0.0], atol=1e-9)
    black = rgb_to_lab(np.zeros((1, 1, 3)))[0, 0]
    np.testing.assert_allclose(black, [0.0, 0.0, 0.0], atol=1e-9)
    gray = rgb_to_lab(np.full((2, 2, 3), 0.5))
    assert np.all(gray[..., 1:] == 0.0)
    assert 50.0 < gray[0, 0, 0] < 55.0


def test_lab_red_is_reddish():
    red = rgb_to_lab(np.array([[[1.0, 0.0, 0.0]]]))[0, 0]
    assert red[1] > 60.0
    assert red[2] > 40.0


def test_check_image_rejects_out_of_range():
    with pytest.raises(ValueError):
        check_image(np.full((2, 2, 3), 1.5))
    with pytest.raises(ValueError):
        check_image(np.zeros((2, 2)))


def test_sample_region_identity_and_flip(rng):
    img = rng.random((6, 5, 3))
    np.testing.assert_allclose(sample_region(img, (0, 0, 1, 1), 6, 5), img, atol=1e-12)
    flipped = sample_region(img, (0, 0, 1, 1), 6, 5, hflip=True)
    np.testing.assert_allclose(flipped, img[:, ::-1], atol=1e-12)


def test_sample_region_integer_crop(rng):
    img = rng.random((8, 8))
    out = sample_region(img, (0.25, 0.5, 0.75, 1.0), 4, 4)
    np.testing.assert_allclose(out, img[2:6, 4:8], atol=1e-12)


def test_resize_keeps_range(rng):
    img = rng.random((7, 9, 3))
    out = resize_bilinear(img, 13, 4)
    assert out.shape == (13, 4, 3)
    assert out.min() >= img.min() and out.max() <= img.max()


def test_resize_nearest_upsamples_blocks():
    labels = np.array([[0, 1], [2, 3]])
    out = resize_nearest(labels, 4, 4)
    np.testing.assert_array_equal(out[:2, :2], 0)
    np.testing.assert_array_equal(out[2:, 2:], 3)


def test_relabel_contiguous_raster_order():
    labels = np.array([[7, 7, 3], [9, 3, 3]])
    np.testing.assert_array_equal(relabel_contiguous(labels), [[0, 0, 1], [2, 1, 1]])


def test_image_and_label_files_roundtrip(tmp_path, rng):
    img = np.round(rng.random((4, 6, 3)) * 255) / 255
    save_image(tmp_path / "a.png", img)
    np.testing.assert_allclose(load_image(tmp_path / "a.png"), img, atol=1e-12)

    labels = rng.integers(0, 300, size=(5, 3))
    save_label_map(tmp_path / "a.rlm", labels)
    np.testing.assert_array_equal(load_label_map(tmp_path / "a.rlm"), labels)


def test_colorize_labels_shape():
    out = colorize_labels(np.array([[0, 1], [2, 0]]))
    assert out.shape == (2, 2, 3)
    np.testing.assert_array_equal(out[0, 0], out[1, 1])


def test_resize_checkerboard_to_single_pixel_averages():
    board = np.array([[0.0, 1.0], [1.0, 0.0]])[..., None]
    out = resize_bilinear(board, 1, 1)
    assert out.shape == (1, 1, 1)
    assert out[0, 0, 0] == pytest.approx(0.5)
