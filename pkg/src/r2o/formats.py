"""Codecs binários: mapas de rótulos (.rlm) e checkpoints (.r2ock).

Ambos seguem o mesmo esquema: cabeçalho fixo em ordem de rede com magic,
versão e comprimentos explícitos, seguido do payload e de um CRC32 calculado
com o campo de CRC zerado. O layout byte a byte está em docs/formatos.md.
"""
from __future__ import annotations
from dataclasses import dataclass, field
import json
import struct
import zlib

import numpy as np

# Mapa de rótulos:
# magic(2) ver(1) label_width(1) h(4) w(4) crc32(4) + h*w rótulos big-endian
LABEL_MAGIC = b"RL"
LABEL_VER = 1
_LABEL_HDR = struct.Struct("!2sBBIII")
_LABEL_DTYPES = {1: ">u1", 2: ">u2", 4: ">u4"}

# Checkpoint:
# magic(2) ver(1) flags(1) epoch(4) config_digest(32) n_entries(4) meta_len(4)
# + meta JSON + entradas + crc32(4)
CKPT_MAGIC = b"RC"
CKPT_VER = 1
_CKPT_HDR = struct.Struct("!2sBBI32sII")
_CRC = struct.Struct("!I")
_ENTRY_NAME = struct.Struct("!H")
_ENTRY_KIND = struct.Struct("!BB")
_DIM = struct.Struct("!I")

DT_FLOAT64 = 1
DT_INT64 = 2
_CKPT_DTYPES = {DT_FLOAT64: ">f8", DT_INT64: ">i8"}


class FormatError(ValueError):
    """Arquivo malformado; `offset` aponta o byte onde a leitura falhou."""

    def __init__(self, reason: str, offset: int = 0):
        super().__init__(f"{reason} (offset {offset})")
        self.reason = reason
        self.offset = offset


def _label_width(max_label: int) -> int:
    if max_label < 0x100:
        return 1
    if max_label < 0x10000:
        return 2
    return 4


def encode_label_map(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels)
    if labels.ndim != 2 or labels.shape[0] < 1 or labels.shape[1] < 1:
        raise ValueError(f"Mapa de rótulos precisa ser 2D não vazio, recebido {labels.shape}")
    if labels.min() < 0:
        raise ValueError("Rótulos negativos não são representáveis")
    h, w = labels.shape
    width = _label_width(int(labels.max()))
    payload = labels.astype(_LABEL_DTYPES[width]).tobytes(order="C")

    header_wo_crc = _LABEL_HDR.pack(LABEL_MAGIC, LABEL_VER, width, h, w, 0)
    crc = zlib.crc32(header_wo_crc + payload) & 0xFFFFFFFF
    return _LABEL_HDR.pack(LABEL_MAGIC, LABEL_VER, width, h, w, crc) + payload


def decode_label_map(raw: bytes) -> np.ndarray:
    if len(raw) < _LABEL_HDR.size:
        raise FormatError("Cabeçalho truncado", len(raw))

    magic, ver, width, h, w, crc = _LABEL_HDR.unpack(raw[: _LABEL_HDR.size])
    if magic != LABEL_MAGIC:
        raise FormatError("Magic inválido", 0)
    if ver != LABEL_VER:
        raise FormatError(f"Versão inválida: {ver}", 2)
    if width not in _LABEL_DTYPES:
        raise FormatError(f"Largura de rótulo inválida: {width}", 3)
    if h < 1 or w < 1:
        raise FormatError("Dimensões nulas", 4)

    expected = _LABEL_HDR.size + h * w * width
    if len(raw) < expected:
        raise FormatError(f"Arquivo truncado: esperados {expected} bytes", len(raw))
    if len(raw) > expected:
        raise FormatError("Bytes excedentes após os rótulos", expected)

    payload = raw[_LABEL_HDR.size :]
    header_wo_crc = _LABEL_HDR.pack(magic, ver, width, h, w, 0)
    if zlib.crc32(header_wo_crc + payload) & 0xFFFFFFFF != crc:
        raise FormatError("CRC inválido", _LABEL_HDR.size - _CRC.size)

    labels = np.frombuffer(payload, dtype=_LABEL_DTYPES[width]).reshape(h, w)
    return labels.astype(np.int64)


@dataclass
class CheckpointPayload:
    """Conteúdo serializável de um checkpoint: metadados + tensores nomeados."""
    epoch: int
    config_digest: bytes
    meta: dict = field(default_factory=dict)
    arrays: dict[str, np.ndarray] = field(default_factory=dict)


def _dtype_code(arr: np.ndarray) -> int:
    if np.issubdtype(arr.dtype, np.floating):
        return DT_FLOAT64
    if np.issubdtype(arr.dtype, np.integer) or arr.dtype == np.bool_:
        return DT_INT64
    raise ValueError(f"dtype não suportado em checkpoint: {arr.dtype}")


def encode_checkpoint(ckpt: CheckpointPayload) -> bytes:
    if len(ckpt.config_digest) != 32:
        raise ValueError("Digest da configuração deve ter 32 bytes")
    meta = json.dumps(ckpt.meta, sort_keys=True, separators=(",", ":")).encode("utf-8")

    body = bytearray()
    for name in sorted(ckpt.arrays):
        arr = np.asarray(ckpt.arrays[name])
        code = _dtype_code(arr)
        encoded_name = name.encode("utf-8")
        body += _ENTRY_NAME.pack(len(encoded_name)) + encoded_name
        body += _ENTRY_KIND.pack(code, arr.ndim)
        for dim in arr.shape:
            body += _DIM.pack(dim)
        body += np.ascontiguousarray(arr, dtype=_CKPT_DTYPES[code]).tobytes()

    header = _CKPT_HDR.pack(
        CKPT_MAGIC, CKPT_VER, 0, ckpt.epoch, ckpt.config_digest, len(ckpt.arrays), len(meta)
    )
    content = header + meta + bytes(body)
    return content + _CRC.pack(zlib.crc32(content) & 0xFFFFFFFF)


def decode_checkpoint(raw: bytes) -> CheckpointPayload:
    if len(raw) < _CKPT_HDR.size + _CRC.size:
        raise FormatError("Checkpoint truncado", len(raw))

    magic, ver, _flags, epoch, digest, n_entries, meta_len = _CKPT_HDR.unpack(
        raw[: _CKPT_HDR.size]
    )
    if magic != CKPT_MAGIC:
        raise FormatError("Magic inválido", 0)
    if ver != CKPT_VER:
        raise FormatError(f"Versão inválida: {ver}", 2)

    content, (crc,) = raw[: -_CRC.size], _CRC.unpack(raw[-_CRC.size :])
    if zlib.crc32(content) & 0xFFFFFFFF != crc:
        raise FormatError("CRC inválido", len(raw) - _CRC.size)

    pos = _CKPT_HDR.size
    if pos + meta_len > len(content):
        raise FormatError("Metadados truncados", pos)
    try:
        meta = json.loads(content[pos : pos + meta_len].decode("utf-8"))
    except ValueError as e:
        raise FormatError(f"Metadados ilegíveis: {e}", pos) from e
    pos += meta_len

    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_entries):
        if pos + _ENTRY_NAME.size > len(content):
            raise FormatError("Entrada truncada", pos)
        (name_len,) = _ENTRY_NAME.unpack_from(content, pos)
        pos += _ENTRY_NAME.size
        if pos + name_len > len(content):
            raise FormatError("Nome de entrada truncado", pos)
        try:
            name = content[pos : pos + name_len].decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError("Nome de entrada não é UTF-8 válido", pos + e.start) from e
        pos += name_len
        if pos + _ENTRY_KIND.size > len(content):
            raise FormatError(f"Entrada '{name}' truncada", pos)
        code, ndim = _ENTRY_KIND.unpack_from(content, pos)
        pos += _ENTRY_KIND.size
        if code not in _CKPT_DTYPES:
            raise FormatError(f"dtype desconhecido {code} em '{name}'", pos - 2)
        if pos + ndim * _DIM.size > len(content):
            raise FormatError(f"Dimensões de '{name}' truncadas", pos)
        shape = tuple(_DIM.unpack_from(content, pos + i * _DIM.size)[0] for i in range(ndim))
        pos += ndim * _DIM.size
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        if pos + nbytes > len(content):
            raise FormatError(f"Dados de '{name}' truncados", pos)
        data = np.frombuffer(content[pos : pos + nbytes], dtype=_CKPT_DTYPES[code])
        arrays[name] = data.reshape(shape).astype(np.float64 if code == DT_FLOAT64 else np.int64)
        pos += nbytes

    if pos != len(content):
        raise FormatError("Bytes excedentes após as entradas", pos)
    return CheckpointPayload(epoch=epoch, config_digest=digest, meta=meta, arrays=arrays)
