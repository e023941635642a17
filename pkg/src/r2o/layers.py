"""Primitivas de camadas em numpy com passe reverso exato.

Cada `*_forward` devolve (saída, cache) e o `*_backward` correspondente recebe
(dout, cache). Tensores espaciais usam canal por último: (N, H, W, C).
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def affine_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    return x @ w + b, (x, w)


def affine_backward(dout: np.ndarray, cache):
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def relu_forward(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dout * mask


def _out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1, pad: int = 1):
    """Convolução 2D via im2col. x: (N, H, W, Cin), w: (kh, kw, Cin, Cout), b: (Cout,)."""
    n, h, wd, cin = x.shape
    kh, kw, wcin, cout = w.shape
    if wcin != cin:
        raise ValueError(f"Canais de entrada {cin} não batem com o filtro {w.shape}")
    ho, wo = _out_size(h, kh, stride, pad), _out_size(wd, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    # (N, H', W', Cin, kh, kw) -> (N, Ho, Wo, kh, kw, Cin)
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * cin)
    out = cols @ w.reshape(kh * kw * cin, cout) + b
    return out.reshape(n, ho, wo, cout), (x.shape, cols, w, stride, pad)


def conv_backward(dout: np.ndarray, cache):
    x_shape, cols, w, stride, pad = cache
    n, h, wd, cin = x_shape
    kh, kw, _, cout = w.shape
    _, ho, wo, _ = dout.shape
    d2 = dout.reshape(-1, cout)

    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)

    dcols = (d2 @ w.reshape(kh * kw * cin, cout).T).reshape(n, ho, wo, kh, kw, cin)
    dxp = np.zeros((n, h + 2 * pad, wd + 2 * pad, cin))
    for i in range(kh):
        for j in range(kw):
            dxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                dcols[:, :, :, i, j]
            )
    dx = dxp[:, pad : pad + h, pad : pad + wd]
    return dx, dw, db


def batchnorm_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: str,
    update_stats: bool = True,
    eps: float = BN_EPS,
    momentum: float = BN_MOMENTUM,
):
    """Batch norm sobre a última dimensão; x: (..., C).

    Em modo "train" normaliza pelas estatísticas do lote e, se `update_stats`,
    atualiza as estatísticas correntes in-place (running = (1-m)*running + m*lote).
    Em modo "eval" usa as estatísticas correntes.
    """
    c = x.shape[-1]
    flat = x.reshape(-1, c)
    if mode == "train":
        mean = flat.mean(axis=0)
        var = flat.var(axis=0)
        if update_stats:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
            running_var *= 1.0 - momentum
            running_var += momentum * var
    elif mode == "eval":
        mean, var = running_mean, running_var
    else:
        raise ValueError(f'Modo de batch norm inválido "{mode}"')

    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (flat - mean) * inv_std
    out = gamma * x_hat + beta
    return out.reshape(x.shape), (x_hat, inv_std, gamma, mode)


def batchnorm_backward(dout: np.ndarray, cache):
    x_hat, inv_std, gamma, mode = cache
    shape = dout.shape
    d = dout.reshape(-1, shape[-1])
    dgamma = (d * x_hat).sum(axis=0)
    dbeta = d.sum(axis=0)
    dx_hat = d * gamma
    if mode == "eval":
        dx = dx_hat * inv_std
    else:
        m = d.shape[0]
        dx = inv_std / m * (m * dx_hat - dx_hat.sum(axis=0) - x_hat * (dx_hat * x_hat).sum(axis=0))
    return dx.reshape(shape), dgamma, dbeta


def fan_in_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)
