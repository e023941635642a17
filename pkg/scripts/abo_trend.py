"""Experimento: ABO das máscaras refinadas ao longo do treino vs. ABO do prior SLIC."""
from __future__ import annotations
import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

# Adicionar src ao path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from r2o.config import load_config, override
from r2o.dataset import synthetic_corpus
from r2o.pipeline import abo_trend

logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
log = logging.getLogger("abo_trend")
log.setLevel(logging.INFO)

CONFIG = Path(__file__).parent / "configs" / "abo_trend.ini"


def main(argv: list[str] | None = None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", type=Path, default=CONFIG)
    p.add_argument("--epochs", type=int, default=None, help="Sobrescreve run.epochs")
    args = p.parse_args(argv)

    cfg = load_config(args.config)
    if args.epochs:
        cfg = override(cfg, "run", epochs=args.epochs)
    corpus = synthetic_corpus(cfg.synthetic)
    log.info("=== ABO ao longo do treino: %d imagens, %d épocas ===", len(corpus), cfg.run.epochs)
    rows = abo_trend(cfg, corpus, cfg.run.output_dir)

    output_dir = Path(__file__).parent / "results"
    output_dir.mkdir(exist_ok=True)
    results_file = output_dir / f"{args.config.stem}.json"
    with open(results_file, "w") as f:
        json.dump([asdict(r) for r in rows], f, indent=2)
    log.info("Resultados salvos em %s", results_file)

    print("\n" + "=" * 50)
    print("ABO POR CHECKPOINT")
    print("=" * 50)
    print(f"{'Época':>8} {'ABO refinado':>16} {'ABO SLIC':>12} {'Ganho':>10}")
    print("-" * 50)
    for r in rows:
        print(f"{r.epoch:>8} {r.refined_abo:>16.4f} {r.slic_abo:>12.4f} "
              f"{r.refined_abo - r.slic_abo:>10.4f}")
    print("=" * 50)
    return rows


if __name__ == "__main__":
    main()
