"""Estado de treino <-> checkpoint binário (redes θ e ξ, momentos, rng, época)."""
from __future__ import annotations
from dataclasses import dataclass
import logging
from pathlib import Path

import numpy as np

from r2o.encoder import EncoderConfig, HeadConfig, Network, NetworkPair
from r2o.formats import CheckpointPayload, decode_checkpoint, encode_checkpoint
from r2o.optim import OptimizerState

log = logging.getLogger("r2o.checkpoint")

_SECTIONS = (
    ("online.param.", "online", "params"),
    ("online.buffer.", "online", "buffers"),
    ("target.param.", "target", "params"),
    ("target.buffer.", "target", "buffers"),
)
_MOMENTUM = "optim.momentum."


class CheckpointMismatchError(RuntimeError):
    pass


@dataclass
class TrainState:
    epoch: int
    step: int
    pair: NetworkPair
    opt: OptimizerState
    shuffle_rng: np.random.Generator


def to_payload(state: TrainState, digest: bytes) -> CheckpointPayload:
    arrays: dict[str, np.ndarray] = {}
    for prefix, net_name, store in _SECTIONS:
        for name, arr in getattr(getattr(state.pair, net_name), store).items():
            arrays[prefix + name] = arr
    for name, arr in state.opt.momentum.items():
        arrays[_MOMENTUM + name] = arr
    meta = {
        "step": state.step,
        "optim_step": state.opt.step,
        "rng": state.shuffle_rng.bit_generator.state,
    }
    return CheckpointPayload(epoch=state.epoch, config_digest=digest, meta=meta, arrays=arrays)


def from_payload(
    payload: CheckpointPayload,
    enc: EncoderConfig,
    head: HeadConfig,
    digest: bytes,
    force: bool = False,
) -> TrainState:
    """Reconstrói o estado; digest diferente do da configuração é erro salvo `force`."""
    if payload.config_digest != digest:
        if not force:
            raise CheckpointMismatchError(
                "Checkpoint gerado com outra configuração (hash "
                f"{payload.config_digest.hex()[:12]} != {digest.hex()[:12]}); use --force"
            )
        log.warning("Hash da configuração difere do checkpoint; continuando por --force")

    stores = {key: {} for key in ("online.params", "online.buffers",
                                  "target.params", "target.buffers")}
    momentum: dict[str, np.ndarray] = {}
    for name, arr in payload.arrays.items():
        arr = np.array(arr)
        if name.startswith(_MOMENTUM):
            momentum[name[len(_MOMENTUM):]] = arr
            continue
        for prefix, net_name, store in _SECTIONS:
            if name.startswith(prefix):
                stores[f"{net_name}.{store}"][name[len(prefix):]] = arr
                break
        else:
            raise ValueError(f"Entrada desconhecida no checkpoint: {name}")

    online = Network(enc, head, stores["online.params"], stores["online.buffers"],
                     with_predictor=True)
    target = Network(enc, head, stores["target.params"], stores["target.buffers"])
    rng = np.random.default_rng()
    rng.bit_generator.state = payload.meta["rng"]
    return TrainState(
        epoch=payload.epoch,
        step=int(payload.meta["step"]),
        pair=NetworkPair(online=online, target=target),
        opt=OptimizerState(momentum=momentum, step=int(payload.meta["optim_step"])),
        shuffle_rng=rng,
    )


def save_checkpoint(path: str | Path, state: TrainState, digest: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(to_payload(state, digest)))
    log.info("Checkpoint gravado: %s (época %d, passo %d)", path, state.epoch, state.step)
    return path


def load_checkpoint(
    path: str | Path, enc: EncoderConfig, head: HeadConfig, digest: bytes, force: bool = False
) -> TrainState:
    payload = decode_checkpoint(Path(path).read_bytes())
    state = from_payload(payload, enc, head, digest, force)
    log.info("Checkpoint carregado: %s (época %d, passo %d)", path, state.epoch, state.step)
    return state


def read_target(path: str | Path, enc: EncoderConfig, head: HeadConfig) -> tuple[int, Network]:
    """Só a rede alvo e a época, sem checar o hash (avaliação de checkpoints)."""
    payload = decode_checkpoint(Path(path).read_bytes())
    state = from_payload(payload, enc, head, payload.config_digest)
    return state.epoch, state.pair.target
