"""Perda de representação mascarada: mask pooling, perda BYOL por par e total simétrico.

Para cada imagem e cada cluster presente nas duas vistas alinhadas, o ramo
online da vista a (pool -> projetor -> preditor) é comparado ao ramo alvo da
vista b (pool -> projetor) por 2 - 2·cos, nas duas direções. O ramo alvo não
recebe gradiente.
"""
from __future__ import annotations
from dataclasses import dataclass, field
import logging
import math

import numpy as np

from r2o.encoder import (
    Network,
    ShapeError,
    encode,
    encode_backward,
    predict,
    predict_backward,
    project,
    project_backward,
    zero_grads,
)
from r2o.refine import RefinedMask

log = logging.getLogger("r2o.objective")

NORM_EPS = 1e-12


class DegenerateBatchError(RuntimeError):
    pass


@dataclass
class ObjectiveConfig:
    per_image_mean: bool = False


@dataclass
class PairTerm:
    image: int
    cluster: int
    direction: int  # 0: online vista 1 contra alvo vista 2; 1: o inverso
    loss: float


@dataclass
class LossReport:
    total: float
    per_pair: list[PairTerm] = field(default_factory=list)
    n_pairs: int = 0
    guarded_norms: int = 0


def mask_pool(features: np.ndarray, grid: np.ndarray, cluster_id: int) -> np.ndarray:
    """Média das features (H, W, D) nas células da máscara com o id dado."""
    if features.shape[:2] != grid.shape:
        raise ShapeError(f"Máscara {grid.shape} não bate com as features {features.shape[:2]}")
    sel = grid == cluster_id
    if not sel.any():
        raise ValueError(f"Cluster {cluster_id} ausente da máscara")
    return features[sel].mean(axis=0)


def _safe_norm(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = np.linalg.norm(v, axis=-1)
    return np.maximum(n, NORM_EPS), n < NORM_EPS


def byol_pair_loss(q: np.ndarray, z: np.ndarray) -> float:
    """2 - 2·<q, z>/(|q|·|z|), com norma protegida por NORM_EPS."""
    losses, _, _ = _pair_losses(np.atleast_2d(q), np.atleast_2d(z))
    return float(losses[0])


def _pair_losses(q: np.ndarray, z: np.ndarray):
    """Perdas por linha e gradiente em relação a q; z é constante (stop-gradient)."""
    nq, gq = _safe_norm(q)
    nz, gz = _safe_norm(z)
    qn = q / nq[:, None]
    zn = z / nz[:, None]
    cos = (qn * zn).sum(-1)
    losses = np.clip(2.0 - 2.0 * cos, 0.0, 4.0)
    dq = -2.0 / nq[:, None] * (zn - np.where(gq, 0.0, cos)[:, None] * qn)
    return losses, dq, int(gq.sum() + gz.sum())


def valid_pairs(m1: RefinedMask, m2: RefinedMask) -> np.ndarray:
    """Ids de cluster presentes nas duas vistas alinhadas."""
    return np.intersect1d(m1.present_ids, m2.present_ids)


@dataclass
class _PooledBatch:
    rows: list[tuple[int, int]]
    p1: np.ndarray
    p2: np.ndarray


def _pool_batch(feats1, feats2, masks1, masks2) -> _PooledBatch:
    rows, p1, p2 = [], [], []
    for b, (m1, m2) in enumerate(zip(masks1, masks2)):
        ids = valid_pairs(m1, m2)
        if ids.size == 0:
            log.warning("Imagem %d sem clusters em comum entre as vistas; ignorada", b)
        for cid in ids:
            rows.append((b, int(cid)))
            p1.append(mask_pool(feats1[b], m1.grid, cid))
            p2.append(mask_pool(feats2[b], m2.grid, cid))
    if not rows:
        raise DegenerateBatchError("Lote sem nenhum par válido (nenhum cluster compartilhado)")
    return _PooledBatch(rows, np.asarray(p1), np.asarray(p2))


def _pool_backward(dp: np.ndarray, rows, masks, shape) -> np.ndarray:
    dfeat = np.zeros(shape)
    for (b, cid), g in zip(rows, dp):
        sel = masks[b].grid == cid
        dfeat[b][sel] += g / sel.sum()
    return dfeat


def _weights(rows, per_image_mean: bool) -> np.ndarray:
    """Peso de cada termo (linha, direção) no total; mesmo peso nas duas direções."""
    n = len(rows)
    if not per_image_mean:
        return np.full(n, 1.0 / (2 * n))
    images = [b for b, _ in rows]
    per_image = {b: images.count(b) for b in set(images)}
    return np.array([1.0 / (len(per_image) * 2 * per_image[b]) for b in images])


def _total(losses0, losses1, rows, per_image_mean: bool) -> float:
    # fsum: soma exatamente arredondada, independente da ordem das vistas
    if not per_image_mean:
        return math.fsum([*losses0, *losses1]) / (2 * len(rows))
    by_image: dict[int, list[float]] = {}
    for (b, _), l0, l1 in zip(rows, losses0, losses1):
        by_image.setdefault(b, []).extend((l0, l1))
    return math.fsum(math.fsum(v) / len(v) for v in by_image.values()) / len(by_image)


@dataclass
class LossGrads:
    dfeat1: np.ndarray
    dfeat2: np.ndarray
    heads: dict[str, np.ndarray]
    head_caches: list = field(default_factory=list)


def symmetric_masked_loss(
    online: Network,
    target: Network,
    online_feats1: np.ndarray,
    online_feats2: np.ndarray,
    target_feats1: np.ndarray,
    target_feats2: np.ndarray,
    masks1: list[RefinedMask],
    masks2: list[RefinedMask],
    cfg: ObjectiveConfig | None = None,
) -> tuple[LossReport, LossGrads]:
    """Total simétrico sobre (imagem, cluster, direção) e gradientes do ramo online.

    O projetor/preditor online roda em modo train (estatísticas do lote, com
    atualização); o projetor alvo usa estatísticas do lote sem tocar nas
    estatísticas correntes do alvo, que só mudam pela EMA.
    """
    cfg = cfg or ObjectiveConfig()
    online_pool = _pool_batch(online_feats1, online_feats2, masks1, masks2)
    target_pool = _pool_batch(target_feats1, target_feats2, masks1, masks2)
    rows = online_pool.rows

    z1, pc1 = project(online, online_pool.p1, "train", True)
    q1, qc1 = predict(online, z1, "train", True)
    z2, pc2 = project(online, online_pool.p2, "train", True)
    q2, qc2 = predict(online, z2, "train", True)
    t1, _ = project(target, target_pool.p1, "train", False)
    t2, _ = project(target, target_pool.p2, "train", False)

    losses0, dq1, g0 = _pair_losses(q1, t2)
    losses1, dq2, g1 = _pair_losses(q2, t1)
    if g0 + g1:
        log.warning("%d normas nulas protegidas por eps no cálculo da perda", g0 + g1)

    w = _weights(rows, cfg.per_image_mean)[:, None]
    heads: dict[str, np.ndarray] = {}
    grads2: dict[str, np.ndarray] = {}
    dp1 = project_backward(predict_backward(w * dq1, qc1, heads), pc1, heads)
    dp2 = project_backward(predict_backward(w * dq2, qc2, grads2), pc2, grads2)
    for name, g in grads2.items():
        heads[name] = heads[name] + g

    per_pair = [PairTerm(b, c, 0, float(l)) for (b, c), l in zip(rows, losses0)]
    per_pair += [PairTerm(b, c, 1, float(l)) for (b, c), l in zip(rows, losses1)]
    report = LossReport(
        total=_total(losses0, losses1, rows, cfg.per_image_mean),
        per_pair=per_pair,
        n_pairs=len(per_pair),
        guarded_norms=g0 + g1,
    )
    grads = LossGrads(
        dfeat1=_pool_backward(dp1, rows, masks1, online_feats1.shape),
        dfeat2=_pool_backward(dp2, rows, masks2, online_feats2.shape),
        heads=heads,
        head_caches=[pc1, qc1, pc2, qc2],
    )
    return report, grads


@dataclass
class StepResult:
    report: LossReport
    grads: dict[str, np.ndarray]
    target_grads: dict[str, np.ndarray]
    relu_masks: list[np.ndarray] = field(default_factory=list)


def masked_byol_step(
    online: Network,
    target: Network,
    view1: np.ndarray,
    view2: np.ndarray,
    masks1: list[RefinedMask],
    masks2: list[RefinedMask],
    cfg: ObjectiveConfig | None = None,
) -> StepResult:
    """Forward dos dois ramos nas duas vistas, perda e gradientes de todos os parâmetros online.

    As máscaras já devem estar alinhadas à grade do toque final. Os
    gradientes do alvo são zeros explícitos: o alvo só muda pela EMA.
    """
    f1, c1 = encode(online, view1, mode="train", update_stats=True)
    f2, c2 = encode(online, view2, mode="train", update_stats=True)
    t1, _ = encode(target, view1, mode="train", update_stats=False)
    t2, _ = encode(target, view2, mode="train", update_stats=False)
    report, lg = symmetric_masked_loss(
        online, target, f1.final, f2.final, t1.final, t2.final, masks1, masks2, cfg
    )
    grads = dict(lg.heads)
    enc1 = encode_backward(online, c1, lg.dfeat1)
    enc2 = encode_backward(online, c2, lg.dfeat2)
    for name in enc1:
        grads[name] = enc1[name] + enc2[name]
    for name, p in online.params.items():
        grads.setdefault(name, np.zeros_like(p))
    masks = [*c1.relu_masks(), *c2.relu_masks()]
    masks += [m for c in lg.head_caches if c is not None for m in c.relu_masks()]
    return StepResult(report=report, grads=grads, target_grads=zero_grads(target), relu_masks=masks)
