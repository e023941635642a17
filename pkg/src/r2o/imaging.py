"""Imagens: leitura/escrita, conversão sRGB→CIELAB, reamostragem bilinear e mapas de rótulos.

Convenções usadas em todo o pacote:
- imagens são arrays float64 (H, W, 3), canal por último, valores em [0, 1];
- mapas de rótulos são arrays int64 (H, W) com rótulos contíguos 0..n-1;
- toda amostragem bilinear usa centros de pixel em meio-inteiro: a saída i de
  uma região [a, b) (normalizada) lê a coordenada a*H + (i + 0.5)*(b - a)*H/out - 0.5.
"""
from __future__ import annotations
import logging
from pathlib import Path

import numpy as np
from PIL import Image

from r2o.formats import decode_label_map, encode_label_map

log = logging.getLogger("r2o.imaging")

# sRGB linear -> XYZ (D65)
_SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
# Linhas normalizadas pelo branco D65 (= soma das linhas), de modo que branco -> (1, 1, 1)
_XYZ_OVER_WHITE = _SRGB_TO_XYZ / _SRGB_TO_XYZ.sum(axis=1, keepdims=True)
_LAB_EPS = 216.0 / 24389.0
_LAB_KAPPA = 24389.0 / 27.0

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"Imagem deve ter forma (H, W, 3), recebida {img.shape}")
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("Imagem com valores fora de [0, 1] ou não finitos")
    return img


def load_image(path: str | Path) -> np.ndarray:
    """Lê imagem raster de 8 bits por canal e escala para [0, 1]."""
    with Image.open(path) as im:
        data = np.asarray(im.convert("RGB"), dtype=np.float64)
    return data / 255.0


def save_image(path: str | Path, img: np.ndarray) -> None:
    data = np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path)


def srgb_to_linear(img: np.ndarray) -> np.ndarray:
    return np.where(img <= 0.04045, img / 12.92, ((img + 0.055) / 1.055) ** 2.4)


def rgb_to_lab(img: np.ndarray) -> np.ndarray:
    """sRGB -> XYZ (D65) -> CIELAB, com a fórmula gama por partes do sRGB."""
    lin = srgb_to_linear(np.asarray(img, dtype=np.float64))
    # lin = g*(1,1,1) + d; como _XYZ_OVER_WHITE @ (1,1,1) = 1, cinzas neutros têm
    # X/Xn = Y/Yn = Z/Zn = g exatamente e portanto a = b = 0 sem erro de arredondamento.
    g = lin[..., 1:2]
    ratios = g + (lin - g) @ _XYZ_OVER_WHITE.T
    ratios = np.maximum(ratios, 0.0)

    f = np.where(ratios > _LAB_EPS, np.cbrt(ratios), (_LAB_KAPPA * ratios + 16.0) / 116.0)
    y = ratios[..., 1]
    L = np.where(y > _LAB_EPS, 116.0 * f[..., 1] - 16.0, _LAB_KAPPA * y)
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([np.clip(L, 0.0, 100.0), a, b], axis=-1)


def luminance(img: np.ndarray) -> np.ndarray:
    return np.asarray(img) @ LUMA_WEIGHTS


def _interp_axis(arr: np.ndarray, coords: np.ndarray, axis: int) -> np.ndarray:
    n = arr.shape[axis]
    c = np.clip(coords, 0.0, n - 1)
    i0 = np.floor(c).astype(np.int64)
    i1 = np.minimum(i0 + 1, n - 1)
    t = c - i0
    shape = [1] * arr.ndim
    shape[axis] = -1
    t = t.reshape(shape)
    return np.take(arr, i0, axis=axis) * (1.0 - t) + np.take(arr, i1, axis=axis) * t


def region_coords(start: float, stop: float, size: int, out: int) -> np.ndarray:
    """Coordenadas de pixel (centro em meio-inteiro) das `out` amostras de [start, stop)."""
    return start * size + (np.arange(out) + 0.5) * ((stop - start) * size / out) - 0.5


def sample_region(
    arr: np.ndarray,
    rect: tuple[float, float, float, float],
    out_h: int,
    out_w: int,
    hflip: bool = False,
) -> np.ndarray:
    """Reamostra bilinearmente a região normalizada (y0, x0, y1, x1) de `arr` em out_h x out_w.

    Funciona para (H, W) ou (H, W, C); bordas são replicadas. É a mesma operação
    para recortes das vistas, redimensionamento e alinhamento de máscaras (RoIAlign).
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"Tamanho de saída inválido: {out_h}x{out_w}")
    arr = np.asarray(arr, dtype=np.float64)
    y0, x0, y1, x1 = rect
    h, w = arr.shape[:2]
    ys = region_coords(y0, y1, h, out_h)
    xs = region_coords(x0, x1, w, out_w)
    if hflip:
        xs = xs[::-1]
    out = _interp_axis(_interp_axis(arr, ys, 0), xs, 1)
    # combinação convexa: a saída nunca sai da faixa da entrada
    return np.clip(out, arr.min(), arr.max())


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.shape[:2] == (out_h, out_w):
        return img.copy()
    return sample_region(img, (0.0, 0.0, 1.0, 1.0), out_h, out_w)


def resize_nearest(labels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Redimensiona rótulos por vizinho mais próximo (rótulos não são interpoláveis)."""
    h, w = labels.shape[:2]
    ys = np.minimum(((np.arange(out_h) + 0.5) * h / out_h).astype(np.int64), h - 1)
    xs = np.minimum(((np.arange(out_w) + 0.5) * w / out_w).astype(np.int64), w - 1)
    return labels[ys[:, None], xs[None, :]]


def relabel_contiguous(labels: np.ndarray) -> np.ndarray:
    """Renumera rótulos para 0..n-1 na ordem de primeira ocorrência (varredura raster)."""
    flat = labels.ravel()
    _, first = np.unique(flat, return_index=True)
    order = flat[np.sort(first)]
    mapping = np.empty(int(flat.max()) + 1, dtype=np.int64)
    mapping[order] = np.arange(order.size)
    return mapping[labels]


def n_labels(labels: np.ndarray) -> int:
    return int(np.unique(labels).size)


def save_label_map(path: str | Path, labels: np.ndarray) -> None:
    Path(path).write_bytes(encode_label_map(labels))
    log.debug("Mapa de rótulos salvo: %s (%dx%d)", path, *np.shape(labels))


def load_label_map(path: str | Path) -> np.ndarray:
    return decode_label_map(Path(path).read_bytes())


def colorize_labels(labels: np.ndarray, cmap: str = "tab20") -> np.ndarray:
    """Mapa de rótulos -> imagem RGB em [0, 1] para inspeção visual."""
    from matplotlib import colormaps

    colors = colormaps[cmap](np.arange(int(labels.max()) + 1) % colormaps[cmap].N)[:, :3]
    return colors[labels]
