from __future__ import annotations

import struct
import zlib

import numpy as np
import pytest

from r2o.formats import (
    CheckpointPayload,
    FormatError,
    decode_checkpoint,
    decode_label_map,
    encode_checkpoint,
    encode_label_map,
)


def test_label_map_roundtrip_picks_narrowest_width():
    labels = np.array([[0, 1, 2], [3, 4, 5]])
    raw = encode_label_map(labels)
    assert raw[:2] == b"RL"
    assert raw[3] == 1
    assert len(raw) == 16 + 6
    np.testing.assert_array_equal(decode_label_map(raw), labels)

    wide = np.array([[0, 70000]])
    raw = encode_label_map(wide)
    assert raw[3] == 4
    decoded = decode_label_map(raw)
    assert decoded.dtype == np.int64
    np.testing.assert_array_equal(decoded, wide)


def test_label_map_rejects_bad_input():
    with pytest.raises(ValueError):
        encode_label_map(np.array([[-1, 0]]))
    with pytest.raises(ValueError):
        encode_label_map(np.zeros(4, dtype=np.int64))


@pytest.mark.parametrize("cut", [0, 5, 17])
def test_label_map_truncated(cut):
    raw = encode_label_map(np.arange(12).reshape(3, 4))
    with pytest.raises(FormatError):
        decode_label_map(raw[:cut])


def test_label_map_corruption_detected():
    raw = bytearray(encode_label_map(np.arange(12).reshape(3, 4)))
    raw[-1] ^= 0xFF
    with pytest.raises(FormatError, match="CRC"):
        decode_label_map(bytes(raw))
    raw = bytearray(encode_label_map(np.arange(12).reshape(3, 4)))
    raw[0:2] = b"XX"
    with pytest.raises(FormatError) as exc:
        decode_label_map(bytes(raw))
    assert exc.value.offset == 0


def _payload() -> CheckpointPayload:
    return CheckpointPayload(
        epoch=7,
        config_digest=bytes(range(32)),
        meta={"step": 21, "rng": {"state": 3}},
        arrays={
            "b.w": np.linspace(-1, 1, 6).reshape(2, 3),
            "a.count": np.array([4, 5], dtype=np.int64),
            "scalar": np.array(2.5),
        },
    )


def test_checkpoint_roundtrip_is_byte_stable():
    raw = encode_checkpoint(_payload())
    back = decode_checkpoint(raw)
    assert back.epoch == 7
    assert back.config_digest == bytes(range(32))
    assert back.meta == {"step": 21, "rng": {"state": 3}}
    assert set(back.arrays) == {"a.count", "b.w", "scalar"}
    np.testing.assert_array_equal(back.arrays["b.w"], _payload().arrays["b.w"])
    assert back.arrays["a.count"].dtype == np.int64
    assert back.arrays["scalar"].shape == ()
    assert encode_checkpoint(back) == raw


def test_checkpoint_errors():
    with pytest.raises(ValueError):
        encode_checkpoint(CheckpointPayload(epoch=0, config_digest=b"short"))
    raw = encode_checkpoint(_payload())
    with pytest.raises(FormatError):
        decode_checkpoint(raw[:10])
    with pytest.raises(FormatError, match="CRC"):
        decode_checkpoint(raw[:-1] + bytes([raw[-1] ^ 1]))


def test_label_map_large_and_u16_limits():
    big = (np.arange(1024 * 1024) % 251).reshape(1024, 1024)
    raw = encode_label_map(big)
    assert raw[3] == 1
    assert len(raw) == 16 + 1024 * 1024
    np.testing.assert_array_equal(decode_label_map(raw), big)

    top = np.array([[0, 65535], [65535, 1]])
    raw = encode_label_map(top)
    assert raw[3] == 2
    assert len(raw) == 16 + 4 * 2
    np.testing.assert_array_equal(decode_label_map(raw), top)


def test_checkpoint_entry_name_must_be_utf8():
    ckpt = CheckpointPayload(epoch=1, config_digest=bytes(range(32)),
                             arrays={"ab": np.zeros(2)})
    raw = bytearray(encode_checkpoint(ckpt))
    at = raw.find(b"ab")
    raw[at : at + 2] = b"\xff\xfe"
    content = bytes(raw[:-4])
    raw = content + struct.pack("!I", zlib.crc32(content) & 0xFFFFFFFF)
    with pytest.raises(FormatError, match="UTF-8") as exc:
        decode_checkpoint(raw)
    assert exc.value.offset == at
