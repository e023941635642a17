"""Métricas de máscaras e segmentação: IoU, ABO, mIoU, atribuição húngara e o
protocolo de segmentação de primeiro plano não supervisionada."""
from __future__ import annotations
from dataclasses import dataclass
import logging

import numpy as np
from scipy.optimize import linear_sum_assignment

from r2o.imaging import resize_nearest
from r2o.refine import kmeans

log = logging.getLogger("r2o.evaluation")


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """|a ∩ b| / |a ∪ b|; vale 1 quando as duas máscaras são vazias."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"Máscaras com formas diferentes: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def binary_masks(labels: np.ndarray, ignore: tuple[int, ...] = ()) -> list[np.ndarray]:
    """Decompõe um mapa de rótulos numa máscara binária por rótulo (em ordem crescente)."""
    return [labels == v for v in np.unique(labels) if v not in ignore]


@dataclass
class AboReport:
    best: list[float]
    mean: float


def abo(gt_regions: list[np.ndarray], proposals: list[np.ndarray]) -> AboReport:
    """Average Best Overlap: média, sobre regiões GT, do melhor IoU entre as propostas."""
    if not gt_regions:
        raise ValueError("ABO precisa de ao menos uma região GT")
    if not proposals:
        raise ValueError("ABO precisa de ao menos uma proposta")
    best = [max(iou(g, p) for p in proposals) for g in gt_regions]
    return AboReport(best=best, mean=float(np.mean(best)))


@dataclass
class Assignment:
    rows: np.ndarray
    cols: np.ndarray
    total: float

    def as_dict(self) -> dict[int, int]:
        return {int(r): int(c) for r, c in zip(self.rows, self.cols)}


def hungarian(cost: np.ndarray) -> Assignment:
    """Atribuição de custo mínimo de min(linhas, colunas) pares (matriz retangular permitida)."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"Matriz de custo deve ser 2D, recebida {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("Matriz de custo com entradas não finitas")
    rows, cols = linear_sum_assignment(cost)
    return Assignment(rows=rows, cols=cols, total=float(cost[rows, cols].sum()))


def confusion_matrix(gt: np.ndarray, pred: np.ndarray, n_classes: int) -> np.ndarray:
    gt = np.asarray(gt, dtype=np.int64).ravel()
    pred = np.asarray(pred, dtype=np.int64).ravel()
    if gt.shape != pred.shape:
        raise ValueError("GT e predição com tamanhos diferentes")
    return np.bincount(gt * n_classes + pred, minlength=n_classes**2).reshape(
        n_classes, n_classes
    )


def miou(confusion: np.ndarray) -> float:
    """Média de TP/(TP+FP+FN) por classe (linhas = GT), ignorando classes ausentes de ambos."""
    confusion = np.asarray(confusion, dtype=np.float64)
    if confusion.ndim != 2 or confusion.shape[0] != confusion.shape[1]:
        raise ValueError(f"Matriz de confusão deve ser quadrada, recebida {confusion.shape}")
    tp = np.diag(confusion)
    denom = confusion.sum(0) + confusion.sum(1) - tp
    present = denom > 0
    if not present.any():
        return 1.0
    return float(np.mean(tp[present] / denom[present]))


@dataclass
class SegmentationResult:
    foreground: np.ndarray
    fg_iou: float
    bg_iou: float
    segment: int
    n_clusters: int

    @property
    def miou(self) -> float:
        return (self.fg_iou + self.bg_iou) / 2.0


def unsup_fg_segment(
    features: np.ndarray, gt: np.ndarray, k: int = 5, seed: int = 0
) -> SegmentationResult:
    """K-means por imagem sobre a grade de features; o segmento atribuído à linha do
    primeiro plano pelo húngaro (custo 1 - IoU) vira a predição; o resto é fundo."""
    gt = np.asarray(gt, dtype=bool)
    h, w, d = features.shape
    model = kmeans(features.reshape(-1, d), k, seed)
    clusters = resize_nearest(model.assignment.reshape(h, w), *gt.shape)
    n = model.k
    cost = np.empty((2, n))
    for j in range(n):
        seg = clusters == j
        cost[0, j] = 1.0 - iou(seg, gt)
        cost[1, j] = 1.0 - iou(seg, ~gt)
    match = hungarian(cost).as_dict()
    # com um único cluster efetivo a linha do primeiro plano pode ficar sem par
    fg_segment = match.get(0, 0)
    fg = clusters == fg_segment
    result = SegmentationResult(
        foreground=fg, fg_iou=iou(fg, gt), bg_iou=iou(~fg, ~gt), segment=fg_segment, n_clusters=n
    )
    log.debug("Segmentação: segmento %d de %d, fg IoU=%.3f, bg IoU=%.3f",
              fg_segment, n, result.fg_iou, result.bg_iou)
    return result
