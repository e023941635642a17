"""Ablação do currículo e do refinamento: ABO final médio por cenário, sobre sementes."""
from __future__ import annotations
import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

# Adicionar src ao path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from r2o.config import RunConfig, load_config, override
from r2o.dataset import synthetic_corpus
from r2o.pipeline import abo_trend

logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
log = logging.getLogger("curriculum_ablation")
log.setLevel(logging.INFO)

CONFIG = Path(__file__).parent / "configs" / "abo_trend.ini"

SCENARIOS = (
    ("região->objeto 16->2", {"curriculum": {"kind": "cosine", "k0": 16, "k_final": 2}}),
    ("objeto->região 2->16", {"curriculum": {"kind": "cosine", "k0": 2, "k_final": 16}}),
    ("fixo K=4", {"curriculum": {"kind": "fixed", "k0": 4, "k_final": 4}}),
    ("sem refinamento", {"refine": {"enabled": False}}),
)


@dataclass
class AblationResult:
    """Resultado de um cenário da ablação."""
    scenario: str
    seeds: list[int]
    final_abo: list[float]
    slic_abo: float

    @property
    def mean_abo(self) -> float:
        return float(np.mean(self.final_abo))


def run_scenario(cfg: RunConfig, name: str, changes: dict, seeds, out_root: Path):
    log.info("=== %s ===", name)
    scores, slic = [], 0.0
    for section, values in changes.items():
        cfg = override(cfg, section, **values)
    corpus = synthetic_corpus(cfg.synthetic)
    for seed in seeds:
        run_cfg = override(cfg, "run", seed=seed, checkpoint_every=cfg.run.epochs)
        out = out_root / f"{name.split()[0].replace('->', '_')}_seed{seed}"
        rows = abo_trend(run_cfg, corpus, out)
        scores.append(rows[-1].refined_abo)
        slic = rows[-1].slic_abo
        log.info("  semente %d: ABO final %.4f (SLIC %.4f)", seed, scores[-1], slic)
    return AblationResult(scenario=name, seeds=list(seeds), final_abo=scores, slic_abo=slic)


def run_ablation(cfg: RunConfig, seeds, out_root: Path, scenarios=SCENARIOS):
    return [run_scenario(cfg, name, changes, seeds, out_root) for name, changes in scenarios]


def main(argv: list[str] | None = None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", type=Path, default=CONFIG)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--out", type=Path, default=Path("runs/curriculum_ablation"))
    args = p.parse_args(argv)

    cfg = load_config(args.config)
    if args.epochs:
        cfg = override(cfg, "run", epochs=args.epochs)
    results = run_ablation(cfg, args.seeds, args.out)

    output_dir = Path(__file__).parent / "results"
    output_dir.mkdir(exist_ok=True)
    results_file = output_dir / "curriculum_ablation.json"
    with open(results_file, "w") as f:
        json.dump([{**asdict(r), "mean_abo": r.mean_abo} for r in results], f, indent=2)
    log.info("Resultados salvos em %s", results_file)

    print("\n" + "=" * 60)
    print("ABLAÇÃO DO CURRÍCULO")
    print("=" * 60)
    print(f"{'Cenário':<26} {'ABO médio':>12} {'ABO SLIC':>10} {'Sementes':>10}")
    print("-" * 60)
    for r in results:
        print(f"{r.scenario:<26} {r.mean_abo:>12.4f} {r.slic_abo:>10.4f} {len(r.seeds):>10}")
    print("=" * 60)
    return results


if __name__ == "__main__":
    main()
