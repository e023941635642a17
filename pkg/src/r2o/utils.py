from __future__ import annotations
import time

import numpy as np


def now_ms() -> int:
    return int(time.time() * 1000)


def derive_seed(*keys: int) -> int:
    """Deriva uma semente de 32 bits determinística a partir de (semente global, índices...)."""
    seq = np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in keys])
    return int(seq.generate_state(1)[0])


def make_rng(*keys: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*keys))


# Tags para separar fluxos aleatórios que partem da mesma semente global
RNG_INIT = 1
RNG_VIEWS = 2
RNG_KMEANS = 3
RNG_SHUFFLE = 4
RNG_EVAL = 5
