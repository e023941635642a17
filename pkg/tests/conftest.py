from __future__ import annotations

import numpy as np
import pytest

from r2o.encoder import EncoderConfig, HeadConfig


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_encoder() -> EncoderConfig:
    # grades: stem 8x8, estágio 1 8x8, estágio 2 (meio) 4x4, estágio 3 (final) 4x4
    return EncoderConfig(
        side=16, stem_channels=4, stem_stride=2, widths=(4, 8, 8), strides=(1, 2, 1),
        mid_stage=2, final_stage=3,
    )


@pytest.fixture
def tiny_heads() -> HeadConfig:
    return HeadConfig(hidden=8, out=4, predictor_hidden=8)


def rel_error(a: float, b: float, floor: float = 1e-6) -> float:
    return abs(a - b) / max(floor, abs(a) + abs(b))


def numeric_grad(f, arr: np.ndarray, idx: tuple, h: float = 1e-5) -> float:
    """Diferença central de f() perturbando arr[idx] in-place."""
    old = arr[idx]
    arr[idx] = old + h
    fp = f()
    arr[idx] = old - h
    fm = f()
    arr[idx] = old
    return (fp - fm) / (2 * h)


def sample_indices(shape: tuple[int, ...], n: int, rng: np.random.Generator) -> list[tuple]:
    flat = rng.choice(int(np.prod(shape)), size=min(n, int(np.prod(shape))), replace=False)
    return [np.unravel_index(int(i), shape) for i in flat]
