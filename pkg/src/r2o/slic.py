"""Prior de regiões: superpixels SLIC (e a alternativa espacial em grade n x n).

SLIC agrupa pixels por cor (CIELAB) e posição: centros iniciados numa grade de
passo S = sqrt(HW/n), atribuição restrita a janelas 2S x 2S com a distância
D = sqrt(d_lab^2 + (d_xy/S)^2 m^2), atualização dos centros pela média, e um
pós-processamento de conectividade que funde fragmentos no vizinho com maior
fronteira compartilhada.
"""
from __future__ import annotations
from dataclasses import dataclass
import logging
import math

import numpy as np
from scipy import ndimage

from r2o.imaging import relabel_contiguous, rgb_to_lab

log = logging.getLogger("r2o.slic")

_FOUR_CONN = ndimage.generate_binary_structure(2, 1)


@dataclass
class SlicConfig:
    n_segments: int = 100
    compactness: float = 10.0
    max_iters: int = 10
    min_region_fraction: float = 0.25

    def __post_init__(self):
        if self.n_segments < 1:
            raise ValueError("n_segments deve ser >= 1")
        if self.compactness <= 0:
            raise ValueError("compactness deve ser > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters deve ser >= 1")
        if not 0.0 <= self.min_region_fraction < 1.0:
            raise ValueError("min_region_fraction deve estar em [0, 1)")


@dataclass
class SlicResult:
    labels: np.ndarray
    centers: np.ndarray  # (n_regions, 5): L, a, b, y, x
    n_regions: int


def grid_shape(h: int, w: int, n: int) -> tuple[int, int]:
    """Número de linhas e colunas da grade inicial, com ny*nx <= n."""
    ny = min(h, max(1, int(round(math.sqrt(n * h / w)))))
    nx = min(w, max(1, n // ny))
    return ny, nx


def _gradient(lab: np.ndarray) -> np.ndarray:
    p = np.pad(lab, ((1, 1), (1, 1), (0, 0)), mode="edge")
    gy = p[2:, 1:-1] - p[:-2, 1:-1]
    gx = p[1:-1, 2:] - p[1:-1, :-2]
    return (gy**2).sum(-1) + (gx**2).sum(-1)


def _init_centers(lab: np.ndarray, ny: int, nx: int) -> np.ndarray:
    h, w = lab.shape[:2]
    grad = _gradient(lab)
    centers = []
    for i in range(ny):
        for j in range(nx):
            cy = (i + 0.5) * h / ny - 0.5
            cx = (j + 0.5) * w / nx - 0.5
            ry, rx = int(round(cy)), int(round(cx))
            # move para o pixel de menor gradiente na vizinhança 3x3, só se for estritamente menor
            best = grad[ry, rx]
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    yy, xx = ry + dy, rx + dx
                    if 0 <= yy < h and 0 <= xx < w and grad[yy, xx] < best:
                        best, cy, cx = grad[yy, xx], float(yy), float(xx)
            iy, ix = min(h - 1, max(0, int(round(cy)))), min(w - 1, max(0, int(round(cx))))
            centers.append([*lab[iy, ix], cy, cx])
    return np.asarray(centers, dtype=np.float64)


def _assign(lab, yy, xx, centers, labels, step, m):
    h, w = lab.shape[:2]
    best = np.full((h, w), np.inf)
    new_labels = labels.copy()
    for k, (L, a, b, cy, cx) in enumerate(centers):
        y_lo, y_hi = max(0, int(math.floor(cy - step))), min(h, int(math.ceil(cy + step)) + 1)
        x_lo, x_hi = max(0, int(math.floor(cx - step))), min(w, int(math.ceil(cx + step)) + 1)
        win = lab[y_lo:y_hi, x_lo:x_hi]
        d_lab = ((win - (L, a, b)) ** 2).sum(-1)
        d_xy = (yy[y_lo:y_hi, x_lo:x_hi] - cy) ** 2 + (xx[y_lo:y_hi, x_lo:x_hi] - cx) ** 2
        dist = d_lab + d_xy / step**2 * m**2
        region = best[y_lo:y_hi, x_lo:x_hi]
        closer = dist < region
        region[closer] = dist[closer]
        new_labels[y_lo:y_hi, x_lo:x_hi][closer] = k
    return new_labels


def _update_centers(lab, yy, xx, labels, centers):
    k = centers.shape[0]
    counts = np.bincount(labels.ravel(), minlength=k).astype(np.float64)
    feats = np.concatenate([lab, yy[..., None], xx[..., None]], axis=-1).reshape(-1, 5)
    sums = np.zeros((k, 5))
    np.add.at(sums, labels.ravel(), feats)
    updated = centers.copy()
    nonempty = counts > 0
    updated[nonempty] = sums[nonempty] / counts[nonempty, None]
    return updated


def _boundary_counts(comp: np.ndarray, target: int) -> np.ndarray:
    """Comprimento da fronteira 4-adjacente entre o componente `target` e cada outro."""
    inside = comp == target
    neighbours = []
    for shifted_in, shifted_comp in (
        (inside[1:, :], comp[:-1, :]),
        (inside[:-1, :], comp[1:, :]),
        (inside[:, 1:], comp[:, :-1]),
        (inside[:, :-1], comp[:, 1:]),
    ):
        touching = shifted_comp[shifted_in]
        neighbours.append(touching[touching != target])
    touching = np.concatenate(neighbours)
    return np.bincount(touching, minlength=int(comp.max()) + 1)


def enforce_connectivity(labels: np.ndarray, min_size: int) -> np.ndarray:
    """Mantém o maior componente 4-conexo de cada rótulo, se tiver ao menos `min_size` pixels.

    Os demais fragmentos são fundidos, do menor para o maior, no componente
    vizinho com maior fronteira compartilhada (empate: menor rótulo original).
    """
    comp = np.zeros_like(labels)
    owner: list[int] = []
    sizes: list[int] = []
    keep: list[bool] = []
    next_id = 0
    for lab_id in np.unique(labels):
        cc, n = ndimage.label(labels == lab_id, structure=_FOUR_CONN)
        cc_sizes = np.bincount(cc.ravel())[1:]
        largest = int(np.argmax(cc_sizes))
        for c in range(n):
            comp[cc == c + 1] = next_id
            owner.append(int(lab_id))
            sizes.append(int(cc_sizes[c]))
            keep.append(c == largest and cc_sizes[c] >= min_size)
            next_id += 1

    if not any(keep):
        keep[int(np.argmax(sizes))] = True

    fragments = sorted((s, c) for c, s in enumerate(sizes) if not keep[c])
    owner_arr = np.asarray(owner)
    for _, frag in fragments:
        shared = _boundary_counts(comp, frag)
        if shared.sum() == 0:
            continue
        best = shared.max()
        candidates = np.flatnonzero(shared == best)
        target = candidates[np.argmin(owner_arr[candidates])]
        comp[comp == frag] = target
        owner_arr[frag] = owner_arr[target]

    return relabel_contiguous(comp)


def slic_segment(lab: np.ndarray, cfg: SlicConfig) -> SlicResult:
    """Superpixels SLIC sobre uma imagem CIELAB (H, W, 3)."""
    h, w = lab.shape[:2]
    n = cfg.n_segments
    if n > h * w:
        log.warning("Imagem %dx%d menor que a grade de %d segmentos; usando %d", h, w, n, h * w)
        n = h * w
    ny, nx = grid_shape(h, w, n)
    n_eff = ny * nx
    step = math.sqrt(h * w / n_eff)

    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    centers = _init_centers(lab, ny, nx)
    # rótulos iniciais: Voronoi espacial dos centros da grade (cobre pixels fora das janelas)
    labels = (np.minimum((yy * ny / h).astype(np.int64), ny - 1) * nx
              + np.minimum((xx * nx / w).astype(np.int64), nx - 1))

    for it in range(cfg.max_iters):
        new_labels = _assign(lab, yy, xx, centers, labels, step, cfg.compactness)
        centers = _update_centers(lab, yy, xx, new_labels, centers)
        changed = int((new_labels != labels).sum())
        labels = new_labels
        log.debug("SLIC iteração %d: %d pixels mudaram de região", it + 1, changed)
        if changed == 0 and it > 0:
            break

    min_size = int(cfg.min_region_fraction * h * w / n_eff)
    labels = enforce_connectivity(labels, min_size)
    n_regions = int(labels.max()) + 1
    final_centers = _update_centers(lab, yy, xx, labels, np.zeros((n_regions, 5)))
    return SlicResult(labels=labels, centers=final_centers, n_regions=n_regions)


def grid_prior(h: int, w: int, cells: int) -> np.ndarray:
    """Prior espacial: grade de cells x cells blocos retangulares (sem informação de cor)."""
    cells_y, cells_x = min(cells, h), min(cells, w)
    ys = np.minimum(np.arange(h) * cells_y // h, cells_y - 1)
    xs = np.minimum(np.arange(w) * cells_x // w, cells_x - 1)
    return ys[:, None] * cells_x + xs[None, :]


@dataclass
class PriorConfig:
    kind: str = "slic"
    grid_cells: int = 10

    def __post_init__(self):
        if self.kind not in ("slic", "grid"):
            raise ValueError(f"Prior desconhecido: {self.kind}")
        if self.grid_cells < 1:
            raise ValueError("grid_cells deve ser >= 1")


def compute_prior(img: np.ndarray, prior: PriorConfig, slic_cfg: SlicConfig) -> np.ndarray:
    """Mapa de rótulos do prior de regiões para uma imagem RGB em [0, 1]."""
    h, w = img.shape[:2]
    if prior.kind == "grid":
        return grid_prior(h, w, prior.grid_cells)
    return slic_segment(rgb_to_lab(img), slic_cfg).labels
