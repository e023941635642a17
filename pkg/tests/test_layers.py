from __future__ import annotations

import numpy as np

from conftest import numeric_grad, rel_error, sample_indices
from r2o.layers import (
    BN_EPS,
    affine_backward,
    affine_forward,
    batchnorm_backward,
    batchnorm_forward,
    conv_backward,
    conv_forward,
)


def _check(f, arr, analytic, rng, n=12, tol=1e-5):
    for idx in sample_indices(arr.shape, n, rng):
        assert rel_error(analytic[idx], numeric_grad(f, arr, idx)) < tol, idx


def test_affine_gradients(rng):
    x, w, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3)), rng.normal(size=3)
    dout = rng.normal(size=(4, 3))
    out, cache = affine_forward(x, w, b)
    dx, dw, db = affine_backward(dout, cache)

    def f():
        return float((affine_forward(x, w, b)[0] * dout).sum())

    _check(f, x, dx, rng)
    _check(f, w, dw, rng)
    _check(f, b, db, rng)


def test_conv_matches_direct_sum(rng):
    x, w, b = rng.normal(size=(1, 4, 4, 2)), rng.normal(size=(3, 3, 2, 3)), rng.normal(size=3)
    out, _ = conv_forward(x, w, b, stride=1, pad=1)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    expected = np.einsum("hwc,hwco->o", xp[0, 1:4, 2:5], w) + b
    np.testing.assert_allclose(out[0, 1, 2], expected, atol=1e-12)


def test_conv_gradients_with_stride(rng):
    x, w, b = rng.normal(size=(2, 5, 5, 3)), rng.normal(size=(3, 3, 3, 4)), rng.normal(size=4)
    out, cache = conv_forward(x, w, b, stride=2, pad=1)
    assert out.shape == (2, 3, 3, 4)
    dout = rng.normal(size=out.shape)
    dx, dw, db = conv_backward(dout, cache)

    def f():
        return float((conv_forward(x, w, b, stride=2, pad=1)[0] * dout).sum())

    _check(f, x, dx, rng)
    _check(f, w, dw, rng)
    _check(f, b, db, rng)


def test_batchnorm_train_gradients(rng):
    x = rng.normal(loc=2.0, scale=3.0, size=(6, 2, 4))
    gamma, beta = rng.normal(size=4), rng.normal(size=4)
    rm, rv = np.zeros(4), np.ones(4)
    dout = rng.normal(size=x.shape)
    _, cache = batchnorm_forward(x, gamma, beta, rm, rv, "train", update_stats=False)
    dx, dgamma, dbeta = batchnorm_backward(dout, cache)

    def f():
        out, _ = batchnorm_forward(x, gamma, beta, rm, rv, "train", update_stats=False)
        return float((out * dout).sum())

    _check(f, x, dx, rng)
    _check(f, gamma, dgamma, rng)
    _check(f, beta, dbeta, rng)
    np.testing.assert_array_equal(rm, 0.0)
    np.testing.assert_array_equal(rv, 1.0)


def test_batchnorm_running_stats_and_eval(rng):
    x = rng.normal(size=(10, 3))
    rm, rv = np.zeros(3), np.ones(3)
    batchnorm_forward(x, np.ones(3), np.zeros(3), rm, rv, "train")
    np.testing.assert_allclose(rm, 0.1 * x.mean(0))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(0))

    out, cache = batchnorm_forward(x, np.ones(3), np.zeros(3), np.zeros(3), np.ones(3), "eval")
    np.testing.assert_allclose(out, x / np.sqrt(1.0 + BN_EPS))
    dx, _, _ = batchnorm_backward(np.ones_like(x), cache)
    np.testing.assert_allclose(dx, 1.0 / np.sqrt(1.0 + BN_EPS))
