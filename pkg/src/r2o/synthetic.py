"""Corpus sintético de formas (discos, retângulos, triângulos) com máscaras GT exatas.

Substitui um conjunto de imagens reais em escala de bancada: cada imagem tem
1 a 3 formas coloridas sobre um fundo com gradiente e ruído, e o mapa GT
marca o fundo com 0 e cada forma visível com 1..n (a última desenhada cobre
as anteriores).
"""
from __future__ import annotations
from dataclasses import asdict, dataclass
import json
import logging
import math
from pathlib import Path

import numpy as np

from r2o.imaging import save_image, save_label_map
from r2o.utils import derive_seed

log = logging.getLogger("r2o.synthetic")

SHAPE_TYPES = ("disk", "rectangle", "triangle")
MAX_ATTEMPTS = 100

PALETTES = {
    "vivid": (
        (0.90, 0.10, 0.10), (0.10, 0.60, 0.15), (0.15, 0.25, 0.90), (0.95, 0.80, 0.10),
        (0.60, 0.15, 0.75), (0.05, 0.75, 0.80), (0.95, 0.50, 0.05), (0.15, 0.15, 0.15),
    ),
    "pastel": (
        (0.98, 0.70, 0.70), (0.70, 0.90, 0.70), (0.70, 0.75, 0.98), (0.98, 0.93, 0.65),
        (0.85, 0.70, 0.95), (0.65, 0.92, 0.93), (0.99, 0.82, 0.62), (0.80, 0.80, 0.80),
    ),
}


@dataclass
class SyntheticCorpusSpec:
    n_images: int = 512
    side: int = 64
    min_shapes: int = 1
    max_shapes: int = 3
    shape_types: tuple[str, ...] = SHAPE_TYPES
    palette: str = "vivid"
    noise: float = 0.03
    gradient: float = 0.25
    min_area: float = 0.01
    max_area: float = 0.60
    seed: int = 0

    def __post_init__(self):
        if self.n_images < 0:
            raise ValueError("n_images deve ser >= 0")
        if self.side < 8:
            raise ValueError("side deve ser >= 8")
        if not 1 <= self.min_shapes <= self.max_shapes:
            raise ValueError("Esperado 1 <= min_shapes <= max_shapes")
        unknown = set(self.shape_types) - set(SHAPE_TYPES)
        if unknown or not self.shape_types:
            raise ValueError(f"Tipos de forma inválidos: {sorted(unknown) or 'nenhum'}")
        if self.palette not in PALETTES:
            raise ValueError(f"Paleta desconhecida: {self.palette}")
        if not 0.0 < self.min_area < self.max_area <= 1.0:
            raise ValueError("Esperado 0 < min_area < max_area <= 1")
        if self.noise < 0 or self.gradient < 0:
            raise ValueError("noise e gradient devem ser >= 0")


@dataclass
class SyntheticImage:
    image: np.ndarray
    gt: np.ndarray
    shapes: list[str]


def _shape_mask(kind: str, side: int, rng: np.random.Generator, area: float) -> np.ndarray:
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    target = area * side * side
    if kind == "disk":
        r = math.sqrt(target / math.pi)
        cy, cx = rng.uniform(r, side - r, size=2) if r < side / 2 else (side / 2, side / 2)
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    if kind == "rectangle":
        aspect = math.exp(rng.uniform(math.log(0.5), math.log(2.0)))
        h = min(side, max(1, int(round(math.sqrt(target / aspect)))))
        w = min(side, max(1, int(round(target / h))))
        y0 = int(rng.integers(0, side - h + 1))
        x0 = int(rng.integers(0, side - w + 1))
        mask = np.zeros((side, side), dtype=bool)
        mask[y0 : y0 + h, x0 : x0 + w] = True
        return mask
    # triângulo quase equilátero inscrito num círculo (área ~ 1.3 r^2)
    r = math.sqrt(target / 1.3)
    cy, cx = rng.uniform(min(r, side / 2), max(side - r, side / 2), size=2)
    base = rng.uniform(0, 2 * math.pi)
    angles = base + np.arange(3) * 2 * math.pi / 3 + rng.uniform(-0.3, 0.3, 3)
    vy, vx = cy + r * np.sin(angles), cx + r * np.cos(angles)
    signs = []
    for i in range(3):
        j = (i + 1) % 3
        signs.append((vx[j] - vx[i]) * (yy - vy[i]) - (vy[j] - vy[i]) * (xx - vx[i]))
    signs = np.stack(signs)
    return np.all(signs >= 0, axis=0) | np.all(signs <= 0, axis=0)


def _background(spec: SyntheticCorpusSpec, rng: np.random.Generator, color) -> np.ndarray:
    side = spec.side
    ramp = np.linspace(-0.5, 0.5, side)
    angle = rng.uniform(0, 2 * math.pi)
    grad = math.cos(angle) * ramp[:, None] + math.sin(angle) * ramp[None, :]
    img = np.asarray(color)[None, None, :] + spec.gradient * grad[..., None]
    return img + rng.normal(0.0, spec.noise, size=img.shape)


def make_image(spec: SyntheticCorpusSpec, index: int) -> SyntheticImage:
    """Imagem `index` do corpus: determinística dado (spec.seed, index)."""
    rng = np.random.default_rng(derive_seed(spec.seed, index))
    palette = np.asarray(PALETTES[spec.palette])
    canvas_area = spec.side * spec.side
    for _ in range(MAX_ATTEMPTS):
        n_shapes = int(rng.integers(spec.min_shapes, spec.max_shapes + 1))
        colors = rng.permutation(len(palette))[: n_shapes + 1]
        img = _background(spec, rng, palette[colors[0]])
        gt = np.zeros((spec.side, spec.side), dtype=np.int64)
        kinds = []
        for s in range(n_shapes):
            kind = str(rng.choice(spec.shape_types))
            area = rng.uniform(max(spec.min_area * 2, 0.03), min(spec.max_area, 0.35))
            mask = _shape_mask(kind, spec.side, rng, area)
            noise = rng.normal(0.0, spec.noise, size=img.shape)
            shade = palette[colors[s + 1]] + noise
            img[mask] = shade[mask]
            gt[mask] = s + 1
            kinds.append(kind)
        visible = np.bincount(gt.ravel(), minlength=n_shapes + 1)[1:] / canvas_area
        if np.all(visible >= spec.min_area) and np.all(visible <= spec.max_area):
            img = np.rint(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
            return SyntheticImage(image=img, gt=gt, shapes=kinds)
    raise RuntimeError(f"Não foi possível gerar a imagem {index} respeitando as áreas")


def make_corpus(spec: SyntheticCorpusSpec) -> list[SyntheticImage]:
    return [make_image(spec, i) for i in range(spec.n_images)]


def write_corpus(spec: SyntheticCorpusSpec, out_dir: str | Path) -> Path:
    """Grava images/*.png, masks/*.rlm e manifest.json em `out_dir`."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(spec.n_images):
        item = make_image(spec, i)
        name = f"img_{i:05d}"
        save_image(out / "images" / f"{name}.png", item.image)
        save_label_map(out / "masks" / f"{name}.rlm", item.gt)
        entries.append({"name": name, "shapes": item.shapes})
    manifest = {"spec": asdict(spec), "images": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    log.info("Corpus sintético gerado: %d imagens em %s", spec.n_images, out)
    return out
