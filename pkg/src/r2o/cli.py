"""CLI do pré-treino região-para-objeto."""
from __future__ import annotations
import argparse
import csv
import logging
import sys
from pathlib import Path

from r2o.checkpoint import CheckpointMismatchError
from r2o.config import RunConfig, load_config
from r2o.dataset import load_corpus, open_corpus
from r2o.objective import DegenerateBatchError
from r2o.optim import NonFiniteError, tau_at
from r2o.pipeline import (
    eval_abo_over_checkpoints,
    eval_seg,
    export_refined,
    pretrain,
)
from r2o.refine import k_at
from r2o.synthetic import write_corpus

log = logging.getLogger("r2o.cli")


def _setup_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _config(path: Path | None) -> RunConfig:
    if path is None:
        log.warning("Sem --config: usando a configuração padrão")
        return RunConfig()
    return load_config(path)


def _corpus(cfg: RunConfig, images: Path | None):
    return load_corpus(images) if images else open_corpus(cfg.dataset, cfg.synthetic)


def _write_csv(out: Path | None, header, rows) -> None:
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    finally:
        if out:
            fh.close()
            log.info("Resultados gravados em %s", out)


def _cmd_pretrain(args) -> None:
    cfg = _config(args.config)
    trainer = pretrain(cfg, resume=args.resume, force=args.force, output_dir=args.output)
    log.info("=== Resultado ===")
    log.info("  Épocas: %d", trainer.state.epoch)
    log.info("  Passos: %d", trainer.state.step)
    if trainer.history:
        log.info("  Perda final: %.5f", trainer.history[-1].loss)


def _cmd_schedule(args) -> None:
    cfg = _config(args.config)
    rows = [
        (t, k_at(cfg.curriculum, t), repr(tau_at(cfg.tau, t)))
        for t in range(cfg.curriculum.epochs + 1)
    ]
    _write_csv(args.out, ("epoch", "K", "tau"), rows)


def _cmd_refine(args) -> None:
    cfg = _config(args.config)
    corpus = load_corpus(args.images)
    export_refined(cfg, args.checkpoint, corpus, args.k, args.out, args.overlay, args.emit_slic)


def _cmd_eval_abo(args) -> None:
    cfg = _config(args.config)
    rows = eval_abo_over_checkpoints(cfg, args.checkpoints, _corpus(cfg, args.images))
    _write_csv(args.out, ("epoch", "refined_abo", "slic_abo"),
               [(r.epoch, r.refined_abo, r.slic_abo) for r in rows])


def _cmd_eval_seg(args) -> None:
    cfg = _config(args.config)
    report = eval_seg(cfg, args.checkpoint, _corpus(cfg, args.images), args.k, args.seed)
    rows = [(r.name, r.fg_iou, r.bg_iou, r.miou) for r in report.rows]
    rows.append(("mean", "", "", report.mean_miou))
    rows.append(("confusion", "", "", report.confusion_miou))
    _write_csv(args.out, ("image", "fg_iou", "bg_iou", "miou"), rows)


def _cmd_gen_synthetic(args) -> None:
    spec = load_config(args.spec).synthetic if args.spec else RunConfig().synthetic
    write_corpus(spec, args.out)


def main(argv: list[str] | None = None) -> int:
    p = argparse.ArgumentParser(prog="r2o", description="Pré-treino auto-supervisionado R2O")
    p.add_argument("-v", "--verbose", action="store_true", help="Logs detalhados")
    sub = p.add_subparsers(dest="cmd", required=True)

    pp = sub.add_parser("pretrain", help="Treina o par online/alvo")
    pp.add_argument("--config", type=Path, required=True)
    pp.add_argument("--resume", type=Path, default=None, help="Checkpoint para retomar")
    pp.add_argument("--force", action="store_true", help="Ignora hash de configuração divergente")
    pp.add_argument("--output", type=Path, default=None, help="Sobrescreve run.output_dir")
    pp.set_defaults(func=_cmd_pretrain)

    ps = sub.add_parser("schedule", help="Tabela CSV de K(t) e tau(t)")
    ps.add_argument("--config", type=Path, default=None)
    ps.add_argument("--out", type=Path, default=None)
    ps.set_defaults(func=_cmd_schedule)

    pr = sub.add_parser("refine", help="Gera máscaras refinadas para um diretório de imagens")
    pr.add_argument("--config", type=Path, default=None)
    pr.add_argument("--checkpoint", type=Path, required=True)
    pr.add_argument("--images", type=Path, required=True)
    pr.add_argument("--k", type=int, required=True)
    pr.add_argument("--out", type=Path, default=Path("refined"))
    pr.add_argument("--overlay", action="store_true", help="Também grava PNGs coloridos")
    pr.add_argument("--emit-slic", action="store_true", help="Também grava o prior usado")
    pr.set_defaults(func=_cmd_refine)

    pa = sub.add_parser("eval-abo", help="ABO das máscaras refinadas por checkpoint vs. prior")
    pa.add_argument("--config", type=Path, default=None)
    pa.add_argument("--checkpoints", type=Path, nargs="+", required=True)
    pa.add_argument("--images", type=Path, default=None, help="Corpus com masks/ (GT)")
    pa.add_argument("--out", type=Path, default=None)
    pa.set_defaults(func=_cmd_eval_abo)

    pe = sub.add_parser("eval-seg", help="Segmentação de primeiro plano não supervisionada")
    pe.add_argument("--config", type=Path, default=None)
    pe.add_argument("--checkpoint", type=Path, required=True)
    pe.add_argument("--images", type=Path, default=None)
    pe.add_argument("--k", type=int, default=5)
    pe.add_argument("--seed", type=int, default=0)
    pe.add_argument("--out", type=Path, default=None)
    pe.set_defaults(func=_cmd_eval_seg)

    pg = sub.add_parser("gen-synthetic", help="Gera o corpus sintético de formas")
    pg.add_argument("--spec", type=Path, default=None, help="INI com a seção [synthetic]")
    pg.add_argument("--out", type=Path, required=True)
    pg.set_defaults(func=_cmd_gen_synthetic)

    args = p.parse_args(argv)
    _setup_logging(args.verbose)
    try:
        args.func(args)
    except (
        ValueError,
        OSError,
        CheckpointMismatchError,
        DegenerateBatchError,
        NonFiniteError,
    ) as exc:
        log.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
