"""Refinamento de regiões e currículo região-para-objeto.

Passo externo da alternância: com as features do alvo fixas, as regiões do
prior (SLIC) viram embeddings por mask pooling, são agrupadas por K-means no
K agendado para a época e cada célula da grade herda o cluster da sua região.
As máscaras refinadas resultantes são alinhadas a cada vista (RoIAlign).
"""
from __future__ import annotations
from dataclasses import dataclass, field
import itertools
import logging
import math

import numpy as np

from r2o.augment import ViewGeometry
from r2o.encoder import Network, encode
from r2o.imaging import resize_bilinear, sample_region
from r2o.utils import RNG_KMEANS, derive_seed

log = logging.getLogger("r2o.refine")

SCHEDULE_KINDS = ("cosine", "linear", "piecewise", "fixed")
# 3 clusters sobre 8 pontos
EXACT_MAX_LABELINGS = 3**8


class ScheduleError(ValueError):
    pass


@dataclass
class CurriculumConfig:
    """Agenda de K por época. t_alpha=None usa ceil(2T/15) (40 para T=300)."""
    k0: int = 128
    k_final: int = 4
    epochs: int = 300
    t_alpha: int | None = None
    kind: str = "cosine"
    literal_cosine: bool = False
    min_k: int = 2
    piecewise_epochs: tuple[float, ...] = ()
    piecewise_values: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"Agenda desconhecida: {self.kind}")
        if self.epochs < 1:
            raise ValueError("epochs deve ser >= 1")
        if self.min_k < 1:
            raise ValueError("min_k deve ser >= 1")
        if min(self.k0, self.k_final) < self.min_k:
            raise ValueError(f"k0 e k_final devem ser >= min_k ({self.min_k})")
        if not 0 <= self.alpha < self.epochs:
            raise ValueError(f"t_alpha deve estar em [0, {self.epochs}), recebido {self.alpha}")
        if len(self.piecewise_epochs) != len(self.piecewise_values):
            raise ValueError("piecewise_epochs e piecewise_values precisam ter o mesmo tamanho")
        if list(self.piecewise_epochs) != sorted(self.piecewise_epochs):
            raise ValueError("piecewise_epochs deve ser crescente")

    @property
    def alpha(self) -> int:
        if self.t_alpha is not None:
            return self.t_alpha
        return min(math.ceil(2 * self.epochs / 15), self.epochs - 1)

    def drops(self) -> list[tuple[float, float]]:
        """Degraus (época, K) da agenda piecewise; padrão: 4 quedas iguais em [t_alpha, T]."""
        if self.piecewise_epochs:
            return list(zip(self.piecewise_epochs, map(float, self.piecewise_values)))
        span = self.epochs - self.alpha
        return [
            (self.alpha + span * i / 4, self.k0 + (self.k_final - self.k0) * i / 4)
            for i in range(1, 5)
        ]


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def k_value(cfg: CurriculumConfig, t: float) -> float:
    """K(t) antes do arredondamento."""
    if not 0 <= t <= cfg.epochs:
        raise ScheduleError(f"Época {t} fora de [0, {cfg.epochs}]")
    if cfg.kind == "fixed" or t < cfg.alpha:
        return float(cfg.k0)
    if cfg.kind == "piecewise":
        value = float(cfg.k0)
        for epoch, k in cfg.drops():
            if t >= epoch:
                value = k
        return value
    progress = (t - cfg.alpha) / (cfg.epochs - cfg.alpha)
    if cfg.kind == "linear":
        return cfg.k_final + (1.0 - progress) * (cfg.k0 - cfg.k_final)
    if cfg.literal_cosine:
        c = math.cos(2.0 * (t - cfg.alpha) / ((cfg.epochs - cfg.alpha) * math.pi))
    else:
        c = math.cos(math.pi / 2.0 * progress)
    return cfg.k_final + c * (cfg.k0 - cfg.k_final)


def k_at(cfg: CurriculumConfig, t: float) -> int:
    """K inteiro da época t: arredondado ao mais próximo e limitado por baixo a min_k."""
    return max(cfg.min_k, _round_half_up(k_value(cfg, t)))


@dataclass
class RegionEmbeddings:
    region_ids: np.ndarray
    embeddings: np.ndarray
    counts: np.ndarray

    def __len__(self) -> int:
        return int(self.region_ids.size)


@dataclass
class ClusterModel:
    centroids: np.ndarray
    assignment: np.ndarray
    inertia: float
    k_requested: int
    clamped: bool = False
    n_iter: int = 0
    sse_history: list[float] = field(default_factory=list)
    objective_history: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return int(self.centroids.shape[0])


@dataclass
class RefinedMask:
    grid: np.ndarray
    present_ids: np.ndarray

    @classmethod
    def from_grid(cls, grid: np.ndarray) -> "RefinedMask":
        grid = np.asarray(grid, dtype=np.int64)
        return cls(grid=grid, present_ids=np.unique(grid))


def downsample_labels(labels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Rótulo majoritário de cada bloco de pixels; empate fica com o menor rótulo."""
    h, w = labels.shape
    if h < out_h or w < out_w:
        raise ValueError(f"Mapa {h}x{w} menor que a grade {out_h}x{out_w}")
    cy = np.arange(h) * out_h // h
    cx = np.arange(w) * out_w // w
    cell = (cy[:, None] * out_w + cx[None, :]).ravel()
    n_lab = int(labels.max()) + 1
    counts = np.bincount(cell * n_lab + labels.ravel(), minlength=out_h * out_w * n_lab)
    return counts.reshape(out_h * out_w, n_lab).argmax(axis=1).reshape(out_h, out_w)


def pool_regions(features: np.ndarray, labels: np.ndarray) -> RegionEmbeddings:
    """Média das features de cada região presente na grade (regiões vazias são puladas)."""
    if features.shape[:2] != labels.shape:
        raise ValueError(f"Rótulos {labels.shape} não batem com a grade {features.shape[:2]}")
    d = features.shape[-1]
    flat = labels.ravel()
    ids, inverse, counts = np.unique(flat, return_inverse=True, return_counts=True)
    sums = np.zeros((ids.size, d))
    np.add.at(sums, inverse, features.reshape(-1, d))
    return RegionEmbeddings(region_ids=ids, embeddings=sums / counts[:, None], counts=counts)


def partition_objective(points: np.ndarray, assignment: np.ndarray) -> float:
    """Média, sobre clusters não vazios, da distância quadrática média ao centróide."""
    per_cluster = []
    for k in np.unique(assignment):
        members = points[assignment == k]
        per_cluster.append(((members - members.mean(axis=0)) ** 2).sum(axis=1).mean())
    return float(np.mean(per_cluster))


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(-1)


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = [points[rng.integers(n)]]
    closest = ((points - centers[0]) ** 2).sum(1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centers.append(points[idx])
        closest = np.minimum(closest, ((points - points[idx]) ** 2).sum(1))
    return np.asarray(centers)


def _means(points: np.ndarray, assignment: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    k = centroids.shape[0]
    counts = np.bincount(assignment, minlength=k)
    sums = np.zeros_like(centroids)
    np.add.at(sums, assignment, points)
    out = centroids.copy()
    nonempty = counts > 0
    out[nonempty] = sums[nonempty] / counts[nonempty, None]
    return out


def _reseed_empty(points, assignment, centroids) -> int:
    """Move o ponto mais distante do seu centróide para cada cluster vazio."""
    k = centroids.shape[0]
    moved = 0
    for _ in range(k):
        counts = np.bincount(assignment, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if empty.size == 0:
            break
        dist = ((points - centroids[assignment]) ** 2).sum(1)
        dist[counts[assignment] <= 1] = -1.0
        far = int(np.argmax(dist))
        if dist[far] <= 0:
            break
        assignment[far] = empty[0]
        centroids[empty[0]] = points[far]
        moved += 1
    return moved


def _local_search(points: np.ndarray, assignment: np.ndarray, k: int, max_passes: int) -> int:
    """Movimentos de um ponto entre clusters enquanto reduzirem o objetivo normalizado.

    Usa estatísticas suficientes por cluster (n, soma, soma dos quadrados), com
    W_k = S2_k/n_k - |s_k/n_k|^2, para avaliar cada movimento em O(K·D).
    """
    sq = (points**2).sum(1)
    n = np.bincount(assignment, minlength=k).astype(np.float64)
    s = np.zeros((k, points.shape[1]))
    np.add.at(s, assignment, points)
    s2 = np.bincount(assignment, weights=sq, minlength=k)

    def spread(n_, s_, s2_):
        with np.errstate(divide="ignore", invalid="ignore"):
            w = s2_ / n_ - (s_**2).sum(-1) / n_**2
        return np.where(n_ > 0, np.maximum(w, 0.0), 0.0)

    moves = 0
    for _ in range(max_passes):
        improved = False
        for i in range(points.shape[0]):
            a = assignment[i]
            if n[a] <= 1:
                continue
            x, x2 = points[i], sq[i]
            old = spread(n, s, s2)
            w_a = spread(n[a] - 1, s[a] - x, s2[a] - x2)
            w_b = spread(n + 1, s + x, s2 + x2)
            delta = (w_a - old[a]) + (w_b - old)
            delta[a] = 0.0
            b = int(np.argmin(delta))
            if delta[b] < -1e-12 * (1.0 + old.sum()):
                n[a] -= 1
                s[a] -= x
                s2[a] -= x2
                n[b] += 1
                s[b] += x
                s2[b] += x2
                assignment[i] = b
                moves += 1
                improved = True
        if not improved:
            break
    return moves


def _exact_partition(points: np.ndarray, k: int) -> np.ndarray | None:
    """Partição com K clusters não vazios de menor objetivo normalizado, por enumeração.

    Devolve None quando há mais de EXACT_MAX_LABELINGS rotulações possíveis.
    """
    n = points.shape[0]
    if k < 2 or int(k) ** n > EXACT_MAX_LABELINGS:
        return None
    labelings = np.array(list(itertools.product(range(k), repeat=n)), dtype=np.int64)
    onehot = (labelings[:, :, None] == np.arange(k)).astype(np.float64)
    counts = onehot.sum(axis=1)
    full = (counts > 0).all(axis=1)
    labelings, onehot, counts = labelings[full], onehot[full], counts[full]
    sums = np.einsum("mnk,nd->mkd", onehot, points)
    sq = np.einsum("mnk,n->mk", onehot, (points**2).sum(1))
    spread = np.maximum(sq / counts - (sums**2).sum(-1) / counts**2, 0.0)
    return labelings[int(np.argmin(spread.mean(axis=1)))]


def _lloyd(points: np.ndarray, k: int, rng: np.random.Generator, max_iters: int, tol: float):
    centroids = _kmeans_pp(points, k, rng)
    assignment = np.argmin(_sq_dists(points, centroids), axis=1)
    sse_history: list[float] = []
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        _reseed_empty(points, assignment, centroids)
        centroids = _means(points, assignment, centroids)
        sse = float(((points - centroids[assignment]) ** 2).sum())
        sse_history.append(sse)
        dists = _sq_dists(points, centroids)
        new_assignment = np.argmin(dists, axis=1)
        # só troca de cluster quem melhora estritamente
        rows = np.arange(points.shape[0])
        keep = dists[rows, assignment] <= dists[rows, new_assignment]
        new_assignment[keep] = assignment[keep]
        changed = int((new_assignment != assignment).sum())
        assignment = new_assignment
        log.debug("kmeans iteração %d: SSE=%.6g, %d pontos mudaram", n_iter, sse, changed)
        if changed == 0:
            break
        prev = sse_history[-2] if len(sse_history) > 1 else None
        if prev is not None and abs(prev - sse) <= tol * max(prev, 1e-300):
            break
    _reseed_empty(points, assignment, centroids)
    return assignment, centroids, sse_history, n_iter


def kmeans(
    points: np.ndarray,
    k: int,
    seed: int,
    max_iters: int = 50,
    tol: float = 1e-6,
    local_search: bool = True,
    n_init: int = 1,
) -> ClusterModel:
    """K-means com inicialização k-means++ e iterações de Lloyd.

    A soma de quadrados intra-cluster nunca cresce entre iterações de Lloyd. Em
    seguida, se `local_search`, movimentos de um ponto refinam a partição até
    um ótimo local do objetivo normalizado (média por cluster da distância
    quadrática média), que é o valor reportado em `inertia`.

    Com `n_init` > 1, cada partida usa sua própria semente derivada de `seed` e
    fica a de menor objetivo. Instâncias com até EXACT_MAX_LABELINGS rotulações
    são conferidas por enumeração, e a partição ótima substitui a encontrada
    quando é estritamente melhor.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 1:
        raise ValueError(f"kmeans precisa de ao menos um ponto (N, D), recebido {points.shape}")
    if k < 1:
        raise ValueError(f"K deve ser >= 1, recebido {k}")
    if n_init < 1:
        raise ValueError(f"n_init deve ser >= 1, recebido {n_init}")
    n_distinct = np.unique(points, axis=0).shape[0]
    k_eff = min(k, n_distinct)
    clamped = k_eff < k
    if clamped:
        log.warning("K=%d maior que o número de pontos distintos (%d); usando K=%d",
                    k, n_distinct, k_eff)

    best = None
    for start in range(n_init):
        rng = np.random.default_rng(seed if start == 0 else derive_seed(seed, start))
        assignment, centroids, sse_history, n_iter = _lloyd(points, k_eff, rng, max_iters, tol)
        objective_history = [partition_objective(points, assignment)]
        if local_search and k_eff > 1:
            moves = _local_search(points, assignment, k_eff, max_iters)
            if moves:
                log.debug("kmeans busca local: %d movimentos", moves)
                objective_history.append(partition_objective(points, assignment))
        if best is None or objective_history[-1] < best[4][-1]:
            best = (assignment, centroids, sse_history, n_iter, objective_history)
    assignment, centroids, sse_history, n_iter, objective_history = best

    exact = _exact_partition(points, k_eff)
    if exact is not None:
        exact_obj = partition_objective(points, exact)
        if exact_obj < objective_history[-1] - 1e-12 * (1.0 + objective_history[-1]):
            log.debug("kmeans: enumeração melhorou o objetivo %.6g -> %.6g",
                      objective_history[-1], exact_obj)
            assignment = exact
            objective_history.append(exact_obj)

    centroids = _means(points, assignment, centroids)
    return ClusterModel(
        centroids=centroids,
        assignment=assignment.astype(np.int64),
        inertia=objective_history[-1],
        k_requested=k,
        clamped=clamped,
        n_iter=n_iter,
        sse_history=sse_history,
        objective_history=objective_history,
    )


def refine_masks(
    embeddings: list[RegionEmbeddings], cluster: ClusterModel, labels_ds: list[np.ndarray]
) -> list[RefinedMask]:
    """Cada célula herda o cluster de sua região; a ordem dos pontos é imagem a imagem."""
    total = sum(len(e) for e in embeddings)
    if total != cluster.assignment.size:
        raise ValueError(f"{total} regiões mas {cluster.assignment.size} atribuições")
    masks = []
    offset = 0
    for emb, lab in zip(embeddings, labels_ds):
        table = np.zeros(int(emb.region_ids.max()) + 1, dtype=np.int64)
        table[emb.region_ids] = cluster.assignment[offset : offset + len(emb)]
        offset += len(emb)
        masks.append(RefinedMask.from_grid(table[lab]))
    return masks


def cluster_regions(
    embeddings: list[RegionEmbeddings],
    labels_ds: list[np.ndarray],
    k: int,
    seed: int,
    scope: str = "batch",
    max_iters: int = 50,
    local_search: bool = True,
    n_init: int = 1,
) -> tuple[list[RefinedMask], list[ClusterModel]]:
    """K-means sobre o lote concatenado (`batch`) ou imagem a imagem (`image`)."""
    if scope == "batch":
        points = np.concatenate([e.embeddings for e in embeddings], axis=0)
        model = kmeans(points, k, seed, max_iters=max_iters, local_search=local_search,
                       n_init=n_init)
        return refine_masks(embeddings, model, labels_ds), [model]
    if scope == "image":
        masks, models = [], []
        for i, (emb, lab) in enumerate(zip(embeddings, labels_ds)):
            model = kmeans(emb.embeddings, k, derive_seed(seed, i), max_iters=max_iters,
                           local_search=local_search, n_init=n_init)
            masks.extend(refine_masks([emb], model, [lab]))
            models.append(model)
        return masks, models
    raise ValueError(f"Escopo de agrupamento desconhecido: {scope}")


def align_mask(mask: RefinedMask, geom: ViewGeometry, out_h: int, out_w: int) -> RefinedMask:
    """RoIAlign da máscara: one-hot por id, amostragem bilinear, argmax (empate: menor id)."""
    ids = mask.present_ids
    onehot = (mask.grid[..., None] == ids[None, None, :]).astype(np.float64)
    sampled = sample_region(onehot, geom.crop, out_h, out_w, geom.hflip)
    return RefinedMask.from_grid(ids[np.argmax(sampled, axis=-1)])


@dataclass
class RefineConfig:
    """`enabled = false` desliga o refinamento: as máscaras são o próprio prior na grade."""
    enabled: bool = True
    scope: str = "batch"
    max_iters: int = 50
    local_search: bool = True
    n_init: int = 1

    def __post_init__(self):
        if self.scope not in ("batch", "image"):
            raise ValueError(f"Escopo desconhecido: {self.scope}")
        if self.max_iters < 1:
            raise ValueError("max_iters deve ser >= 1")
        if self.n_init < 1:
            raise ValueError("n_init deve ser >= 1")


@dataclass
class RefinementResult:
    masks: list[RefinedMask]
    labels_ds: list[np.ndarray]
    embeddings: list[RegionEmbeddings]
    models: list[ClusterModel]

    @property
    def k_effective(self) -> int:
        if not self.models:
            return max(int(m.present_ids.size) for m in self.masks)
        return max(m.k for m in self.models)


def refine_batch(
    target: Network,
    images: list[np.ndarray],
    priors: list[np.ndarray],
    k: int,
    seed: int,
    cfg: RefineConfig | None = None,
) -> RefinementResult:
    """Passo de refinamento de um lote com a rede alvo em modo eval (sem gradiente).

    As imagens inteiras são redimensionadas para o lado do codificador; o prior
    de cada imagem é reduzido à grade do toque intermediário.
    """
    cfg = cfg or RefineConfig()
    if not cfg.enabled:
        side = target.enc.mid_grid
        labels_ds = [downsample_labels(p, side, side) for p in priors]
        masks = [RefinedMask.from_grid(lab) for lab in labels_ds]
        return RefinementResult(masks=masks, labels_ds=labels_ds, embeddings=[], models=[])
    side = target.enc.side
    batch = np.stack([resize_bilinear(img, side, side) for img in images])
    feats, _ = encode(target, batch, mode="eval")
    hm, wm = feats.mid.shape[1:3]
    labels_ds = [downsample_labels(p, hm, wm) for p in priors]
    embeddings = [pool_regions(f, lab) for f, lab in zip(feats.mid, labels_ds)]
    masks, models = cluster_regions(
        embeddings, labels_ds, k, derive_seed(seed, RNG_KMEANS), cfg.scope, cfg.max_iters,
        cfg.local_search, cfg.n_init,
    )
    log.debug("Refinamento: %d imagens, %d regiões, K=%d",
              len(images), sum(len(e) for e in embeddings), k)
    return RefinementResult(masks=masks, labels_ds=labels_ds, embeddings=embeddings, models=models)
