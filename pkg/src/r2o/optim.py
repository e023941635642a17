"""Otimizadores (SGD com momento, LARS) e agendas escalares de lr e τ."""
from __future__ import annotations
from dataclasses import dataclass, field
import logging
import math

import numpy as np

from r2o.refine import ScheduleError

log = logging.getLogger("r2o.optim")

# Parâmetros sem decaimento nem adaptação LARS: vieses e batch norm
_EXCLUDED_SUFFIXES = (".b", ".gamma", ".beta")


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class OptimConfig:
    base_lr: float = 0.3
    weight_decay: float = 1e-6
    momentum: float = 0.9
    warmup_fraction: float = 0.01
    kind: str = "sgd_momentum"
    trust_coefficient: float = 1e-3
    total_steps: int = 1
    batch_size: int = 256

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr deve ser > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum deve estar em [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay deve ser >= 0")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction deve estar em [0, 1)")
        if self.kind not in ("sgd_momentum", "lars"):
            raise ValueError(f"Otimizador desconhecido: {self.kind}")
        if self.trust_coefficient <= 0:
            raise ValueError("trust_coefficient deve ser > 0")
        if self.total_steps < 1 or self.batch_size < 1:
            raise ValueError("total_steps e batch_size devem ser >= 1")

    @property
    def peak_lr(self) -> float:
        return self.base_lr * self.batch_size / 256.0

    @property
    def warmup_steps(self) -> int:
        return max(1, round(self.warmup_fraction * self.total_steps))


@dataclass
class TauConfig:
    tau_base: float = 0.99
    tau_final: float = 1.0
    epochs: int = 300

    def __post_init__(self):
        if not 0.0 <= self.tau_base <= self.tau_final <= 1.0:
            raise ValueError("Esperado 0 <= tau_base <= tau_final <= 1")
        if self.epochs < 1:
            raise ValueError("epochs deve ser >= 1")


def lr_at(cfg: OptimConfig, step: int) -> float:
    """Rampa linear 0 -> pico no aquecimento, depois meio cosseno até 0 no último passo."""
    if not 0 <= step <= cfg.total_steps:
        raise ScheduleError(f"Passo {step} fora de [0, {cfg.total_steps}]")
    warm = min(cfg.warmup_steps, cfg.total_steps)
    if step < warm:
        return cfg.peak_lr * step / warm
    rest = cfg.total_steps - warm
    progress = 1.0 if rest == 0 else (step - warm) / rest
    return 0.5 * cfg.peak_lr * (1.0 + math.cos(math.pi * progress))


def tau_at(cfg: TauConfig, epoch: float) -> float:
    """τ cresce de tau_base a tau_final por cosseno ao longo das épocas."""
    if not 0 <= epoch <= cfg.epochs:
        raise ScheduleError(f"Época {epoch} fora de [0, {cfg.epochs}]")
    return cfg.tau_final - (cfg.tau_final - cfg.tau_base) * (
        math.cos(math.pi * epoch / cfg.epochs) + 1.0
    ) / 2.0


@dataclass
class OptimizerState:
    momentum: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "OptimizerState":
        return cls({name: np.zeros_like(p) for name, p in params.items()}, 0)


def is_excluded(name: str) -> bool:
    return name.endswith(_EXCLUDED_SUFFIXES)


def step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    cfg: OptimConfig,
) -> OptimizerState:
    """Um passo in-place: g' = g + λw, v <- m·v + α·g', w <- w - lr·v.

    α é 1 no SGD; no LARS é trust·|w|/|g'| quando ambas as normas são
    positivas. Vieses e parâmetros de BN ficam fora do decaimento e da
    adaptação no LARS. Gradientes não finitos abortam antes de qualquer escrita.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"Gradiente não finito em {name} (passo {state.step})")
    lars = cfg.kind == "lars"
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"Gradiente de {name} com forma {g.shape}, esperado {p.shape}")
        excluded = lars and is_excluded(name)
        if not excluded and cfg.weight_decay:
            g = g + cfg.weight_decay * p
        scale = 1.0
        if lars and not excluded:
            w_norm = float(np.linalg.norm(p))
            g_norm = float(np.linalg.norm(g))
            if w_norm > 0 and g_norm > 0:
                scale = cfg.trust_coefficient * w_norm / g_norm
        v = state.momentum.setdefault(name, np.zeros_like(p))
        v *= cfg.momentum
        v += scale * g
        p -= lr * v
    state.step += 1
    return state
