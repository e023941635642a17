"""Gera os gráficos dos experimentos (ABO por época, perda/K, ablação do currículo)."""
from __future__ import annotations
import argparse
import csv
import json
from pathlib import Path

# Tentar importar matplotlib
try:
    import matplotlib
    matplotlib.use('Agg')  # Backend não-interativo
    import matplotlib.pyplot as plt
except ImportError:
    print("ERRO: matplotlib não instalado. Execute: pip install matplotlib")
    exit(1)

RESULTS = Path(__file__).parent / "results"


def load_json(path: Path) -> list[dict]:
    with open(path) as f:
        return json.load(f)


def plot_abo_trend(rows: list[dict], output_dir: Path):
    """ABO das máscaras refinadas por checkpoint contra o ABO constante do prior."""
    epochs = [r["epoch"] for r in rows]
    fig, ax = plt.subplots(figsize=(8, 5))
    ax.plot(epochs, [r["refined_abo"] for r in rows], 'o-', color='#2ecc71', label='Refinado')
    ax.plot(epochs, [r["slic_abo"] for r in rows], '--', color='#7f8c8d', label='SLIC')
    ax.set_xlabel('Época', fontsize=12)
    ax.set_ylabel('ABO', fontsize=12)
    ax.set_title('Average Best Overlap por checkpoint', fontsize=14, fontweight='bold')
    ax.legend()
    ax.grid(alpha=0.3)
    plt.tight_layout()
    plt.savefig(output_dir / 'abo_trend.png', dpi=150)
    plt.close()
    print(f"Gráfico salvo: {output_dir / 'abo_trend.png'}")


def plot_training_curves(metrics_csv: Path, output_dir: Path):
    """Perda por passo e K agendado no eixo secundário."""
    with open(metrics_csv, newline="") as f:
        rows = list(csv.DictReader(f))
    steps = [int(r["step"]) for r in rows]
    fig, ax = plt.subplots(figsize=(10, 5))
    ax.plot(steps, [float(r["loss"]) for r in rows], color='#3498db', linewidth=1, label='Perda')
    ax.set_xlabel('Passo', fontsize=12)
    ax.set_ylabel('Perda', fontsize=12, color='#3498db')
    ax2 = ax.twinx()
    ax2.step(steps, [int(r["K"]) for r in rows], where='post', color='#e67e22', label='K')
    ax2.set_ylabel('K', fontsize=12, color='#e67e22')
    ax.set_title('Perda e número de clusters ao longo do treino', fontsize=14, fontweight='bold')
    plt.tight_layout()
    plt.savefig(output_dir / 'training_curves.png', dpi=150)
    plt.close()
    print(f"Gráfico salvo: {output_dir / 'training_curves.png'}")


def plot_ablation(rows: list[dict], output_dir: Path):
    """ABO final médio por cenário."""
    names = [r["scenario"] for r in rows]
    means = [r["mean_abo"] for r in rows]
    fig, ax = plt.subplots(figsize=(9, 5))
    bars = ax.bar(names, means, color=['#2ecc71', '#e74c3c', '#95a5a6', '#3498db'][: len(rows)])
    ax.axhline(rows[0]["slic_abo"], linestyle='--', color='#7f8c8d', label='SLIC')
    for bar, val in zip(bars, means):
        ax.text(bar.get_x() + bar.get_width() / 2, bar.get_height() + 0.005,
                f'{val:.3f}', ha='center', va='bottom', fontsize=9)
    ax.set_ylabel('ABO final', fontsize=12)
    ax.set_title('Ablação do currículo e do refinamento', fontsize=14, fontweight='bold')
    ax.legend()
    plt.tight_layout()
    plt.savefig(output_dir / 'curriculum_ablation.png', dpi=150)
    plt.close()
    print(f"Gráfico salvo: {output_dir / 'curriculum_ablation.png'}")


def main(argv: list[str] | None = None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--metrics", type=Path, default=Path("runs/abo_trend/metrics.csv"))
    args = p.parse_args(argv)

    RESULTS.mkdir(exist_ok=True)
    trend = RESULTS / "abo_trend.json"
    if trend.exists():
        plot_abo_trend(load_json(trend), RESULTS)
    if args.metrics.exists():
        plot_training_curves(args.metrics, RESULTS)
    ablation = RESULTS / "curriculum_ablation.json"
    if ablation.exists():
        plot_ablation(load_json(ablation), RESULTS)


if __name__ == "__main__":
    main()
