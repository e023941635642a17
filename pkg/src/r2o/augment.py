"""Geração das duas vistas aumentadas por imagem, com geometria registrada.

Política estilo BYOL: recorte aleatório redimensionado, flip horizontal,
color jitter, tons de cinza, blur gaussiano (sempre na vista 1) e
solarização (somente na vista 2). A geometria é registrada antes das operações
fotométricas, que nunca a alteram.
"""
from __future__ import annotations
from dataclasses import dataclass
import logging
import math

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from scipy.ndimage import correlate1d

from r2o.imaging import luminance, sample_region

log = logging.getLogger("r2o.augment")

MAX_CROP_ATTEMPTS = 10


@dataclass(frozen=True)
class ViewGeometry:
    """Recorte normalizado (y0, x0, y1, x1) no referencial da imagem inteira + flip."""
    y0: float
    x0: float
    y1: float
    x1: float
    hflip: bool = False

    def __post_init__(self):
        if not (0.0 <= self.y0 < self.y1 <= 1.0 and 0.0 <= self.x0 < self.x1 <= 1.0):
            raise ValueError(f"Geometria inválida: {self}")

    @property
    def crop(self) -> tuple[float, float, float, float]:
        return (self.y0, self.x0, self.y1, self.x1)

    @classmethod
    def full(cls) -> "ViewGeometry":
        return cls(0.0, 0.0, 1.0, 1.0, False)


@dataclass
class AugmentationConfig:
    side: int = 64
    crop_scale: tuple[float, float] = (0.08, 1.0)
    crop_ratio: tuple[float, float] = (3.0 / 4.0, 4.0 / 3.0)
    flip_prob: float = 0.5
    jitter_prob: float = 0.8
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.2
    hue: float = 0.1
    grayscale_prob: float = 0.2
    blur_kernel: int = 23
    blur_sigma: tuple[float, float] = (0.1, 2.0)
    blur_prob: tuple[float, float] = (1.0, 0.1)
    solarize_prob: tuple[float, float] = (0.0, 0.2)
    solarize_threshold: float = 128.0 / 255.0

    def __post_init__(self):
        probs = (self.flip_prob, self.jitter_prob, self.grayscale_prob,
                 *self.blur_prob, *self.solarize_prob, self.solarize_threshold)
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError("Probabilidades/limiar de aumento devem estar em [0, 1]")
        if self.blur_kernel < 1 or self.blur_kernel % 2 == 0:
            raise ValueError(f"Kernel de blur deve ser ímpar, recebido {self.blur_kernel}")
        if not 0.0 < self.blur_sigma[0] <= self.blur_sigma[1]:
            raise ValueError("Faixa de sigma deve ser positiva e ordenada")
        if not 0.0 < self.crop_scale[0] <= self.crop_scale[1] <= 1.0:
            raise ValueError("Faixa de escala do recorte deve estar em (0, 1]")
        if not 0.0 < self.crop_ratio[0] <= self.crop_ratio[1]:
            raise ValueError("Faixa de proporção do recorte inválida")
        if self.side < 1:
            raise ValueError("Lado da vista deve ser >= 1")


@dataclass
class AugmentedView:
    image: np.ndarray
    geometry: ViewGeometry


def sample_crop(
    rng: np.random.Generator,
    h: int,
    w: int,
    scale: tuple[float, float],
    ratio: tuple[float, float],
) -> tuple[int, int, int, int]:
    """Sorteia (top, left, ch, cw) em pixels: área uniforme em `scale`, proporção log-uniforme.

    Após MAX_CROP_ATTEMPTS rejeições cai para o recorte central de maior área
    compatível com `ratio`.
    """
    area = h * w
    log_ratio = (math.log(ratio[0]), math.log(ratio[1]))
    for _ in range(MAX_CROP_ATTEMPTS):
        target = area * rng.uniform(scale[0], scale[1])
        aspect = math.exp(rng.uniform(log_ratio[0], log_ratio[1]))
        cw = int(round(math.sqrt(target * aspect)))
        ch = int(round(math.sqrt(target / aspect)))
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            return top, left, ch, cw

    log.warning("Amostrador de recorte degenerado em %dx%d; usando recorte central", h, w)
    in_ratio = w / h
    if in_ratio < ratio[0]:
        cw, ch = w, max(1, int(round(w / ratio[0])))
    elif in_ratio > ratio[1]:
        ch, cw = h, max(1, int(round(h * ratio[1])))
    else:
        ch, cw = h, w
    return (h - ch) // 2, (w - cw) // 2, ch, cw


def solarize(img: np.ndarray, threshold: float = 128.0 / 255.0) -> np.ndarray:
    return np.where(img >= threshold, 1.0 - img, img)


def gaussian_kernel(sigma: float, size: int = 23) -> np.ndarray:
    half = size // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float, kernel: int = 23) -> np.ndarray:
    """Convolução gaussiana separável normalizada, borda replicada."""
    if sigma <= 0:
        raise ValueError(f"sigma deve ser positivo, recebido {sigma}")
    k = gaussian_kernel(sigma, kernel)
    out = correlate1d(img, k, axis=0, mode="nearest")
    out = correlate1d(out, k, axis=1, mode="nearest")
    return np.clip(out, 0.0, 1.0)


def grayscale(img: np.ndarray) -> np.ndarray:
    gray = luminance(img)
    return np.repeat(gray[..., None], 3, axis=-1)


def adjust_brightness(img: np.ndarray, factor: float) -> np.ndarray:
    return np.clip(img * factor, 0.0, 1.0)


def adjust_contrast(img: np.ndarray, factor: float) -> np.ndarray:
    mean = luminance(img).mean()
    return np.clip((img - mean) * factor + mean, 0.0, 1.0)


def adjust_saturation(img: np.ndarray, factor: float) -> np.ndarray:
    gray = luminance(img)[..., None]
    return np.clip((img - gray) * factor + gray, 0.0, 1.0)


def adjust_hue(img: np.ndarray, shift: float) -> np.ndarray:
    """Rotação de matiz no espaço HSV; `shift` em frações de volta, [-0.5, 0.5]."""
    hsv = rgb_to_hsv(img)
    hsv[..., 0] = (hsv[..., 0] + shift) % 1.0
    return np.clip(hsv_to_rgb(hsv), 0.0, 1.0)


def color_jitter(
    img: np.ndarray,
    rng: np.random.Generator,
    brightness: float = 0.4,
    contrast: float = 0.4,
    saturation: float = 0.2,
    hue: float = 0.1,
) -> np.ndarray:
    """Brilho -> contraste -> saturação -> matiz, cada passo limitado a [0, 1]."""
    b = rng.uniform(max(0.0, 1.0 - brightness), 1.0 + brightness)
    c = rng.uniform(max(0.0, 1.0 - contrast), 1.0 + contrast)
    s = rng.uniform(max(0.0, 1.0 - saturation), 1.0 + saturation)
    hshift = rng.uniform(-hue, hue)
    out = adjust_brightness(img, b)
    out = adjust_contrast(out, c)
    out = adjust_saturation(out, s)
    if hue > 0:
        out = adjust_hue(out, hshift)
    return out


def _make_view(img: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator, index: int):
    h, w = img.shape[:2]
    top, left, ch, cw = sample_crop(rng, h, w, cfg.crop_scale, cfg.crop_ratio)
    hflip = bool(rng.random() < cfg.flip_prob)
    geom = ViewGeometry(top / h, left / w, (top + ch) / h, (left + cw) / w, hflip)
    out = sample_region(img, geom.crop, cfg.side, cfg.side, hflip)

    # sorteios sempre consumidos, aplicados ou não, para manter a sequência aleatória estável
    do_jitter = rng.random() < cfg.jitter_prob
    jitter_rng = np.random.default_rng(rng.integers(0, 2**32))
    do_gray = rng.random() < cfg.grayscale_prob
    do_blur = rng.random() < cfg.blur_prob[index]
    sigma = rng.uniform(*cfg.blur_sigma)
    do_solarize = rng.random() < cfg.solarize_prob[index]

    if do_jitter:
        out = color_jitter(out, jitter_rng, cfg.brightness, cfg.contrast, cfg.saturation, cfg.hue)
    if do_gray:
        out = grayscale(out)
    if do_blur:
        out = gaussian_blur(out, sigma, cfg.blur_kernel)
    if do_solarize:
        out = solarize(out, cfg.solarize_threshold)
    return AugmentedView(image=out, geometry=geom)


def make_views(
    img: np.ndarray, cfg: AugmentationConfig, seed: int
) -> tuple[AugmentedView, AugmentedView]:
    """Duas amostras independentes da política, determinísticas dado `seed`."""
    if img.shape[0] < 2 or img.shape[1] < 2:
        raise ValueError(f"Imagem precisa ter ao menos 2x2, recebida {img.shape[:2]}")
    rng = np.random.default_rng(seed)
    return _make_view(img, cfg, rng, 0), _make_view(img, cfg, rng, 1)
