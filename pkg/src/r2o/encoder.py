"""Codificador convolucional siamês com cabeças projetor/preditor e alvo por EMA.

Parâmetros e estatísticas de batch norm ficam em dicionários planos
nome -> array ("stage2.block1.conv.w", "proj.bn.gamma", ...), o que mantém
otimizador, EMA e checkpoint independentes da arquitetura.
"""
from __future__ import annotations
from dataclasses import dataclass, field
import copy
import logging

import numpy as np

from r2o.layers import (
    affine_backward,
    affine_forward,
    batchnorm_backward,
    batchnorm_forward,
    conv_backward,
    conv_forward,
    fan_in_uniform,
    relu_backward,
    relu_forward,
)

log = logging.getLogger("r2o.encoder")


class ShapeError(ValueError):
    pass


@dataclass
class EncoderConfig:
    side: int = 64
    stem_channels: int = 16
    stem_stride: int = 2
    widths: tuple[int, ...] = (16, 32, 64)
    strides: tuple[int, ...] = (2, 2, 2)
    mid_stage: int = 2
    final_stage: int = 3

    def __post_init__(self):
        if len(self.widths) != len(self.strides) or not self.widths:
            raise ValueError("widths e strides precisam ter o mesmo tamanho (>= 1)")
        if any(s not in (1, 2) for s in (self.stem_stride, *self.strides)):
            raise ValueError("strides devem ser 1 ou 2")
        if not 1 <= self.mid_stage < self.final_stage <= len(self.widths):
            raise ValueError("mid_stage deve preceder final_stage, ambos dentro dos estágios")
        if self.grid(self.final_stage) < 1:
            raise ValueError(f"Entrada {self.side} pequena demais para os strides")

    def grid(self, stage: int) -> int:
        """Lado espacial da saída do estágio `stage` (0 = stem)."""
        size = self.side
        for s in (self.stem_stride, *self.strides[:stage]):
            size = (size - 1) // s + 1
        return size

    @property
    def mid_grid(self) -> int:
        return self.grid(self.mid_stage)

    @property
    def final_grid(self) -> int:
        return self.grid(self.final_stage)

    @property
    def d_mid(self) -> int:
        return self.widths[self.mid_stage - 1]

    @property
    def d_final(self) -> int:
        return self.widths[self.final_stage - 1]


@dataclass
class HeadConfig:
    hidden: int = 128
    out: int = 32
    predictor_hidden: int = 128
    predictor: str = "mlp"

    def __post_init__(self):
        if min(self.hidden, self.out, self.predictor_hidden) < 1:
            raise ValueError("Larguras das cabeças devem ser >= 1")
        if self.predictor not in ("mlp", "identity"):
            raise ValueError(f"Preditor desconhecido: {self.predictor}")


@dataclass
class Network:
    enc: EncoderConfig
    head: HeadConfig
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    with_predictor: bool = False

    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))


@dataclass
class NetworkPair:
    online: Network
    target: Network


@dataclass
class FeaturePair:
    mid: np.ndarray
    final: np.ndarray


@dataclass
class EncoderCache:
    blocks: list = field(default_factory=list)
    mid_block: int = 0

    def relu_masks(self):
        for _, _, mask in self.blocks:
            yield mask


@dataclass
class MlpCache:
    fc1: tuple
    bn: tuple
    relu: np.ndarray
    fc2: tuple

    def relu_masks(self):
        yield self.relu


def _blocks(enc: EncoderConfig) -> list[tuple[str, int, int, int]]:
    """(prefixo, cin, cout, stride) de cada bloco conv-BN-ReLU, na ordem de execução."""
    blocks = [("stem", 3, enc.stem_channels, enc.stem_stride)]
    cin = enc.stem_channels
    for s in range(enc.final_stage):
        cout = enc.widths[s]
        blocks.append((f"stage{s + 1}.block1", cin, cout, enc.strides[s]))
        blocks.append((f"stage{s + 1}.block2", cout, cout, 1))
        cin = cout
    return blocks


def _stage_end(enc: EncoderConfig, stage: int) -> int:
    """Índice do bloco cuja saída é o toque do estágio `stage`."""
    return 2 * stage


def _init_mlp(rng, params, buffers, prefix, din, hidden, dout):
    params[f"{prefix}.fc1.w"] = fan_in_uniform(rng, (din, hidden), din)
    params[f"{prefix}.fc1.b"] = np.zeros(hidden)
    params[f"{prefix}.bn.gamma"] = np.ones(hidden)
    params[f"{prefix}.bn.beta"] = np.zeros(hidden)
    buffers[f"{prefix}.bn.mean"] = np.zeros(hidden)
    buffers[f"{prefix}.bn.var"] = np.ones(hidden)
    params[f"{prefix}.fc2.w"] = fan_in_uniform(rng, (hidden, dout), hidden)
    params[f"{prefix}.fc2.b"] = np.zeros(dout)


def init_network(
    enc: EncoderConfig, head: HeadConfig, seed: int, predictor: bool = True
) -> Network:
    """Pesos uniformes escalados por fan-in; BN com gamma=1, beta=0, estatísticas (0, 1)."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    for prefix, cin, cout, _ in _blocks(enc):
        params[f"{prefix}.conv.w"] = fan_in_uniform(rng, (3, 3, cin, cout), 9 * cin)
        params[f"{prefix}.bn.gamma"] = np.ones(cout)
        params[f"{prefix}.bn.beta"] = np.zeros(cout)
        buffers[f"{prefix}.bn.mean"] = np.zeros(cout)
        buffers[f"{prefix}.bn.var"] = np.ones(cout)
    _init_mlp(rng, params, buffers, "proj", enc.d_final, head.hidden, head.out)
    if predictor and head.predictor == "mlp":
        _init_mlp(rng, params, buffers, "pred", head.out, head.predictor_hidden, head.out)
    net = Network(enc, head, params, buffers, with_predictor=predictor)
    log.debug("Rede iniciada: %d parâmetros (preditor=%s)", net.n_params(), predictor)
    return net


def make_pair(enc: EncoderConfig, head: HeadConfig, seed: int) -> NetworkPair:
    """Rede online θ e alvo ξ = cópia de θ sem o preditor."""
    online = init_network(enc, head, seed)
    target = Network(
        enc,
        head,
        {k: v.copy() for k, v in online.params.items() if not k.startswith("pred.")},
        {k: v.copy() for k, v in online.buffers.items() if not k.startswith("pred.")},
    )
    return NetworkPair(online=online, target=target)


def encode(
    net: Network, images: np.ndarray, mode: str = "eval", update_stats: bool = True
) -> tuple[FeaturePair, EncoderCache | None]:
    """Forward do codificador; devolve os toques "mid" e "final" (e o cache em modo train)."""
    enc = net.enc
    if images.ndim != 4 or images.shape[1:] != (enc.side, enc.side, 3):
        raise ShapeError(
            f"Esperado lote (B, {enc.side}, {enc.side}, 3), recebido {images.shape}"
        )
    cache = EncoderCache() if mode == "train" else None
    x = images
    taps = {}
    for i, (prefix, _, _, stride) in enumerate(_blocks(enc)):
        conv_out, conv_cache = conv_forward(x, net.params[f"{prefix}.conv.w"], 0.0, stride, 1)
        bn_out, bn_cache = batchnorm_forward(
            conv_out,
            net.params[f"{prefix}.bn.gamma"],
            net.params[f"{prefix}.bn.beta"],
            net.buffers[f"{prefix}.bn.mean"],
            net.buffers[f"{prefix}.bn.var"],
            mode,
            update_stats,
        )
        x, mask = relu_forward(bn_out)
        if cache is not None:
            cache.blocks.append((conv_cache, bn_cache, mask))
        taps[i] = x
    if cache is not None:
        cache.mid_block = _stage_end(enc, enc.mid_stage)
    feats = FeaturePair(
        mid=taps[_stage_end(enc, enc.mid_stage)], final=taps[_stage_end(enc, enc.final_stage)]
    )
    return feats, cache


def encode_backward(
    net: Network,
    cache: EncoderCache | None,
    dfinal: np.ndarray,
    dmid: np.ndarray | None = None,
) -> dict[str, np.ndarray]:
    """Gradientes exatos de todos os parâmetros do codificador dado dL/d(final) (e dL/d(mid))."""
    if cache is None or not cache.blocks:
        raise RuntimeError("backward sem cache: rode encode(..., mode='train') antes")
    grads: dict[str, np.ndarray] = {}
    blocks = _blocks(net.enc)
    dx = dfinal
    for i in range(len(blocks) - 1, -1, -1):
        prefix = blocks[i][0]
        if i == cache.mid_block and dmid is not None:
            dx = dx + dmid
        conv_cache, bn_cache, mask = cache.blocks[i]
        dbn = relu_backward(dx, mask)
        dconv, grads[f"{prefix}.bn.gamma"], grads[f"{prefix}.bn.beta"] = batchnorm_backward(
            dbn, bn_cache
        )
        dx, grads[f"{prefix}.conv.w"], _ = conv_backward(dconv, conv_cache)
    return grads


def _mlp_forward(net: Network, prefix: str, x: np.ndarray, mode: str, update_stats: bool):
    p = net.params
    expected = p[f"{prefix}.fc1.w"].shape[0]
    if x.ndim != 2 or x.shape[1] != expected:
        raise ShapeError(f"{prefix}: esperada dimensão {expected}, recebido {x.shape}")
    h, fc1 = affine_forward(x, p[f"{prefix}.fc1.w"], p[f"{prefix}.fc1.b"])
    h, bn = batchnorm_forward(
        h,
        p[f"{prefix}.bn.gamma"],
        p[f"{prefix}.bn.beta"],
        net.buffers[f"{prefix}.bn.mean"],
        net.buffers[f"{prefix}.bn.var"],
        mode,
        update_stats,
    )
    h, relu = relu_forward(h)
    out, fc2 = affine_forward(h, p[f"{prefix}.fc2.w"], p[f"{prefix}.fc2.b"])
    return out, MlpCache(fc1, bn, relu, fc2)


def _mlp_backward(prefix: str, dout: np.ndarray, cache: MlpCache, grads: dict) -> np.ndarray:
    dh, grads[f"{prefix}.fc2.w"], grads[f"{prefix}.fc2.b"] = affine_backward(dout, cache.fc2)
    dh = relu_backward(dh, cache.relu)
    dh, grads[f"{prefix}.bn.gamma"], grads[f"{prefix}.bn.beta"] = batchnorm_backward(dh, cache.bn)
    dx, grads[f"{prefix}.fc1.w"], grads[f"{prefix}.fc1.b"] = affine_backward(dh, cache.fc1)
    return dx


def project(net: Network, pooled: np.ndarray, mode: str = "train", update_stats: bool = True):
    """Projetor: Linear -> BN -> ReLU -> Linear sobre vetores (N, D_final)."""
    return _mlp_forward(net, "proj", pooled, mode, update_stats)


def predict(net: Network, z: np.ndarray, mode: str = "train", update_stats: bool = True):
    if not net.with_predictor:
        raise RuntimeError("Rede sem preditor (a rede alvo não tem preditor)")
    if net.head.predictor == "identity":
        return z, None
    return _mlp_forward(net, "pred", z, mode, update_stats)


def project_backward(dz: np.ndarray, cache: MlpCache, grads: dict) -> np.ndarray:
    return _mlp_backward("proj", dz, cache, grads)


def predict_backward(dq: np.ndarray, cache: MlpCache | None, grads: dict) -> np.ndarray:
    if cache is None:
        return dq
    return _mlp_backward("pred", dq, cache, grads)


def ema_update(online: Network, target: Network, tau: float) -> Network:
    """ξ <- τ·ξ + (1-τ)·θ, parâmetro a parâmetro, incluindo estatísticas de BN."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau fora de [0, 1]: {tau}")
    for store, src in ((target.params, online.params), (target.buffers, online.buffers)):
        for name, xi in store.items():
            theta = src[name]
            if theta.shape != xi.shape:
                raise ShapeError(f"EMA: forma divergente em {name}: {theta.shape} vs {xi.shape}")
            store[name] = tau * xi + (1.0 - tau) * theta
    return target


def zero_grads(net: Network) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(p) for name, p in net.params.items()}


def clone(net: Network) -> Network:
    return copy.deepcopy(net)
