"""Orquestração: laço de treino em dois níveis, checkpoints, métricas e avaliações.

A cada lote: (a) refinamento com a rede alvo sobre as imagens inteiras
(prior em cache, K-means no K da época); (b) duas vistas por imagem,
alinhamento das máscaras a cada vista, perda simétrica, backward, passo do
otimizador e EMA do alvo. As máscaras são constantes no passo (b).
"""
from __future__ import annotations
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
import csv
import logging
import math
from pathlib import Path

import numpy as np

from r2o.augment import make_views
from r2o.checkpoint import TrainState, load_checkpoint, read_target, save_checkpoint
from r2o.config import RunConfig, config_hash, override
from r2o.dataset import Corpus, open_corpus
from r2o.encoder import Network, encode, ema_update, make_pair
from r2o.evaluation import abo, binary_masks, confusion_matrix, miou, unsup_fg_segment
from r2o.imaging import (
    colorize_labels,
    resize_bilinear,
    resize_nearest,
    save_image,
    save_label_map,
)
from r2o.objective import DegenerateBatchError, masked_byol_step
from r2o.optim import NonFiniteError, OptimizerState, lr_at, step, tau_at
from r2o.refine import align_mask, k_at, refine_batch
from r2o.slic import compute_prior
from r2o.utils import RNG_EVAL, RNG_INIT, RNG_SHUFFLE, RNG_VIEWS, derive_seed, make_rng, now_ms

log = logging.getLogger("r2o.pipeline")

METRICS_FILE = "metrics.csv"


@dataclass
class StepStats:
    step: int
    epoch: int
    K: int
    tau: float
    lr: float
    loss: float
    n_pairs: int
    wall_ms: int


METRIC_COLUMNS = tuple(f.name for f in fields(StepStats))


def read_metrics(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class Trainer:
    """Dono do estado de treino (redes, otimizador, rng de embaralhamento) de uma execução."""

    def __init__(self, cfg: RunConfig, corpus: Corpus | None = None, output_dir=None):
        self.cfg = cfg
        self.corpus = corpus if corpus is not None else open_corpus(cfg.dataset, cfg.synthetic)
        if len(self.corpus) == 0:
            raise ValueError("Corpus vazio")
        self.out = Path(output_dir or cfg.run.output_dir)
        self.optim_cfg = cfg.optim_for(len(self.corpus))
        self.digest = config_hash(cfg)
        self.seed = cfg.run.seed
        self.side = cfg.encoder.side
        self._resized: dict[int, np.ndarray] = {}
        self._priors: dict[int, np.ndarray] = {}
        self.history: list[StepStats] = []
        pair = make_pair(cfg.encoder, cfg.heads, derive_seed(self.seed, RNG_INIT))
        self.state = TrainState(
            epoch=0,
            step=0,
            pair=pair,
            opt=OptimizerState.zeros_like(pair.online.params),
            shuffle_rng=make_rng(self.seed, RNG_SHUFFLE),
        )
        self._metrics_ready = False

    @property
    def online(self) -> Network:
        return self.state.pair.online

    @property
    def target(self) -> Network:
        return self.state.pair.target

    def image(self, i: int) -> np.ndarray:
        if i not in self._resized:
            self._resized[i] = resize_bilinear(self.corpus.images[i], self.side, self.side)
        return self._resized[i]

    def prior(self, i: int) -> np.ndarray:
        """Prior da imagem redimensionada; calculado no primeiro uso e mantido em cache."""
        if i not in self._priors:
            self._priors[i] = compute_prior(self.image(i), self.cfg.prior, self.cfg.slic)
        return self._priors[i]

    def resume(self, path: str | Path, force: bool = False) -> TrainState:
        self.state = load_checkpoint(path, self.cfg.encoder, self.cfg.heads, self.digest, force)
        self._metrics_ready = True
        self._truncate_metrics(self.state.step)
        return self.state

    def _truncate_metrics(self, last_step: int) -> None:
        path = self.out / METRICS_FILE
        if not path.exists():
            return
        rows = [r for r in read_metrics(path) if int(r["step"]) < last_step]
        self._write_rows(path, rows, "w")

    def _write_rows(self, path: Path, rows, mode: str) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, mode, newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
            if mode == "w":
                writer.writeheader()
            writer.writerows(rows)

    def _views(self, indices, step_idx: int):
        def job(pos_i):
            pos, i = pos_i
            return make_views(self.image(i), self.cfg.augment,
                              derive_seed(self.seed, RNG_VIEWS, step_idx, pos))

        jobs = list(enumerate(indices))
        if self.cfg.run.workers > 0:
            with ThreadPoolExecutor(max_workers=self.cfg.run.workers) as pool:
                return list(pool.map(job, jobs))
        return [job(j) for j in jobs]

    def train_step(self, indices, epoch: int, k: int, tau: float) -> StepStats:
        t0 = now_ms()
        st = self.state
        images = [self.image(i) for i in indices]
        priors = [self.prior(i) for i in indices]
        refined = refine_batch(self.target, images, priors, k, derive_seed(self.seed, st.step),
                               self.cfg.refine)

        views = self._views(indices, st.step)
        hf = wf = self.cfg.encoder.final_grid
        masks1 = [align_mask(m, v1.geometry, hf, wf) for m, (v1, _) in zip(refined.masks, views)]
        masks2 = [align_mask(m, v2.geometry, hf, wf) for m, (_, v2) in zip(refined.masks, views)]
        batch1 = np.stack([v1.image for v1, _ in views])
        batch2 = np.stack([v2.image for _, v2 in views])

        try:
            result = masked_byol_step(self.online, self.target, batch1, batch2, masks1, masks2,
                                      self.cfg.objective)
        except DegenerateBatchError:
            log.error("Passo %d (época %d) sem pares válidos com K=%d", st.step, epoch, k)
            raise
        loss = result.report.total
        if not math.isfinite(loss):
            log.error("Perda não finita no passo %d (época %d, K=%d)", st.step, epoch, k)
            raise NonFiniteError(f"Perda não finita no passo {st.step}: {loss}")

        lr = lr_at(self.optim_cfg, st.step)
        step(self.online.params, result.grads, st.opt, lr, self.optim_cfg)
        ema_update(self.online, self.target, tau)

        stats = StepStats(
            step=st.step, epoch=epoch, K=k, tau=tau, lr=lr, loss=loss,
            n_pairs=result.report.n_pairs, wall_ms=now_ms() - t0,
        )
        st.step += 1
        log.debug("passo %d: K=%d tau=%.6f lr=%.6g perda=%.6f pares=%d",
                  stats.step, k, tau, lr, loss, stats.n_pairs)
        return stats

    def fit(self, max_epochs: int | None = None) -> TrainState:
        """Treina da época corrente até run.epochs (ou até `max_epochs` épocas concluídas)."""
        cfg = self.cfg
        n = len(self.corpus)
        batch = min(cfg.run.batch_size, n)
        per_epoch = cfg.steps_per_epoch(n)
        metrics = self.out / METRICS_FILE
        if not self._metrics_ready or not metrics.exists():
            self._write_rows(metrics, [], "w")
            self._metrics_ready = True
        stop = cfg.run.epochs if max_epochs is None else min(cfg.run.epochs, max_epochs)
        log.info("Treino: %d imagens, lote %d, %d passos/época, épocas %d..%d",
                 n, batch, per_epoch, self.state.epoch, stop)

        while self.state.epoch < stop:
            epoch = self.state.epoch
            k = k_at(cfg.curriculum, epoch)
            tau = tau_at(cfg.tau, epoch)
            order = self.state.shuffle_rng.permutation(n)
            rows = []
            for b in range(per_epoch):
                stats = self.train_step(order[b * batch : (b + 1) * batch], epoch, k, tau)
                rows.append(stats)
            self.history.extend(rows)
            self._write_rows(metrics, [vars(r) for r in rows], "a")
            self.state.epoch = epoch + 1
            log.info("Época %d/%d: K=%d tau=%.5f perda média=%.5f",
                     epoch + 1, cfg.run.epochs, k, tau, float(np.mean([r.loss for r in rows])))

            done = self.state.epoch
            every = cfg.run.checkpoint_every
            if (every and done % every == 0) or done == cfg.run.epochs:
                self.save(self.checkpoint_path(done))
            dump = cfg.run.mask_dump_every
            if dump and done % dump == 0:
                self.dump_masks(done, k)
        return self.state

    def checkpoint_path(self, epoch: int) -> Path:
        return self.out / "checkpoints" / f"epoch_{epoch:04d}.r2ock"

    def save(self, path: str | Path) -> Path:
        return save_checkpoint(path, self.state, self.digest)

    def dump_masks(self, epoch: int, k: int) -> None:
        count = min(self.cfg.run.mask_dump_images, len(self.corpus))
        if count == 0:
            return
        idx = list(range(count))
        refined = refine_batch(self.target, [self.image(i) for i in idx],
                               [self.prior(i) for i in idx], k,
                               derive_seed(self.seed, RNG_EVAL, epoch), self.cfg.refine)
        out = self.out / "masks" / f"epoch_{epoch:04d}"
        out.mkdir(parents=True, exist_ok=True)
        for i, mask in zip(idx, refined.masks):
            save_label_map(out / f"{self.corpus.names[i]}.rlm", mask.grid)
        log.info("Máscaras refinadas da época %d gravadas em %s", epoch, out)


def pretrain(cfg: RunConfig, corpus: Corpus | None = None, resume: str | Path | None = None,
             force: bool = False, output_dir: str | Path | None = None) -> Trainer:
    trainer = Trainer(cfg, corpus, output_dir)
    if resume:
        trainer.resume(resume, force)
    trainer.fit()
    return trainer


# --- avaliação -------------------------------------------------------------


def _resized(corpus: Corpus, side: int) -> list[np.ndarray]:
    return [resize_bilinear(img, side, side) for img in corpus.images]


def _chunks(n: int, size: int):
    for start in range(0, n, size):
        yield list(range(start, min(n, start + size)))


def _gt_objects(gt: np.ndarray) -> list[np.ndarray]:
    return binary_masks(gt, ignore=(0,))


def corpus_abo(gts: list[np.ndarray], proposals: list[np.ndarray]) -> float:
    """ABO agregado: média dos melhores IoUs de todas as regiões GT do corpus."""
    best: list[float] = []
    for gt, labels in zip(gts, proposals):
        objects = _gt_objects(gt)
        if objects:
            best.extend(abo(objects, binary_masks(resize_nearest(labels, *gt.shape))).best)
    if not best:
        raise ValueError("Nenhuma região GT no corpus")
    return float(np.mean(best))


@dataclass
class AboRow:
    epoch: int
    refined_abo: float
    slic_abo: float


def refine_corpus(cfg: RunConfig, target: Network, images, priors, k: int, seed: int):
    """Máscaras refinadas (grade do toque intermediário) de todo o corpus, lote a lote."""
    masks = []
    for b, idx in enumerate(_chunks(len(images), cfg.run.batch_size)):
        refined = refine_batch(target, [images[i] for i in idx], [priors[i] for i in idx], k,
                               derive_seed(seed, b), cfg.refine)
        masks.extend(m.grid for m in refined.masks)
    return masks


def eval_abo_over_checkpoints(
    cfg: RunConfig, checkpoints: list[str | Path], corpus: Corpus
) -> list[AboRow]:
    """ABO das máscaras refinadas de cada checkpoint; o refinamento fica ligado mesmo que a
    configuração de treino o desligue."""
    if not corpus.has_gt:
        raise ValueError("Avaliação de ABO exige máscaras GT para todas as imagens")
    cfg = override(cfg, "refine", enabled=True)
    images = _resized(corpus, cfg.encoder.side)
    priors = [compute_prior(img, cfg.prior, cfg.slic) for img in images]
    slic_abo = corpus_abo(corpus.masks, priors)
    log.info("ABO do prior (%s): %.4f", cfg.prior.kind, slic_abo)

    rows = []
    for path in checkpoints:
        epoch, target = read_target(path, cfg.encoder, cfg.heads)
        k = k_at(cfg.curriculum, min(epoch, cfg.curriculum.epochs))
        masks = refine_corpus(cfg, target, images, priors, k,
                              derive_seed(cfg.run.seed, RNG_EVAL, epoch))
        row = AboRow(epoch=epoch, refined_abo=corpus_abo(corpus.masks, masks), slic_abo=slic_abo)
        log.info("Época %d: ABO refinado %.4f (K=%d), prior %.4f",
                 epoch, row.refined_abo, k, slic_abo)
        rows.append(row)
    return rows


@dataclass
class SegRow:
    name: str
    fg_iou: float
    bg_iou: float
    miou: float


@dataclass
class SegReport:
    rows: list[SegRow]
    mean_miou: float
    confusion_miou: float


def eval_seg(cfg: RunConfig, checkpoint: str | Path, corpus: Corpus, k: int = 5,
             seed: int = 0) -> SegReport:
    """Segmentação de primeiro plano não supervisionada com as features finais do alvo."""
    if not corpus.has_gt:
        raise ValueError("eval-seg exige máscaras GT para todas as imagens")
    _, target = read_target(checkpoint, cfg.encoder, cfg.heads)
    rows = []
    confusion = np.zeros((2, 2), dtype=np.int64)
    for i, img in enumerate(_resized(corpus, cfg.encoder.side)):
        feats, _ = encode(target, img[None], mode="eval")
        gt = corpus.masks[i] > 0
        res = unsup_fg_segment(feats.final[0], gt, k, derive_seed(seed, i))
        confusion += confusion_matrix(gt, res.foreground, 2)
        rows.append(SegRow(corpus.names[i], res.fg_iou, res.bg_iou, res.miou))
    mean = float(np.mean([r.miou for r in rows])) if rows else float("nan")
    report = SegReport(rows=rows, mean_miou=mean, confusion_miou=miou(confusion))
    log.info("eval-seg: %d imagens, mIoU médio %.4f, mIoU por confusão %.4f",
             len(rows), report.mean_miou, report.confusion_miou)
    return report


def export_refined(
    cfg: RunConfig,
    checkpoint: str | Path,
    corpus: Corpus,
    k: int,
    out_dir: str | Path,
    overlay: bool = False,
    emit_prior: bool = False,
) -> Path:
    """Grava as máscaras refinadas (na resolução de cada imagem) como .rlm e, opcionalmente,
    sobreposições coloridas em PNG e o prior usado."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _, target = read_target(checkpoint, cfg.encoder, cfg.heads)
    images = _resized(corpus, cfg.encoder.side)
    priors = [compute_prior(img, cfg.prior, cfg.slic) for img in images]
    masks = refine_corpus(cfg, target, images, priors, k, derive_seed(cfg.run.seed, RNG_EVAL))
    for name, original, grid, prior in zip(corpus.names, corpus.images, masks, priors):
        full = resize_nearest(grid, *original.shape[:2])
        save_label_map(out / f"{name}.rlm", full)
        if overlay:
            save_image(out / f"{name}_overlay.png", 0.5 * original + 0.5 * colorize_labels(full))
        if emit_prior:
            save_label_map(out / f"{name}_prior.rlm", resize_nearest(prior, *original.shape[:2]))
    log.info("%d máscaras refinadas (K=%d) gravadas em %s", len(masks), k, out)
    return out


def abo_trend(cfg: RunConfig, corpus: Corpus, output_dir: str | Path) -> list[AboRow]:
    """Treina e avalia o ABO em cada checkpoint gravado da execução."""
    pretrain(cfg, corpus, output_dir=output_dir)
    checkpoints = sorted((Path(output_dir) / "checkpoints").glob("epoch_*.r2ock"))
    return eval_abo_over_checkpoints(cfg, checkpoints, corpus)
