"""Versioned little-endian model file: magic "DCEM1", embedded canonical
config text, then a tensor table (name, dtype, shape, checksum, payload).

Writes are deterministic (tensors sorted by name), so save -> load -> save
produces byte-identical files.  Per-tensor CRCs catch truncation and
corruption at load time.
"""

from __future__ import annotations

import struct
import zlib
from typing import NamedTuple

import numpy as np

MODEL_MAGIC = b"DCEM1"
MODEL_VERSION = 1

_DTYPE_F32 = 0
_DTYPE_F64 = 1
_DTYPE_I8 = 2


class ModelFileError(ValueError):
    pass


class QuantizedTensor(NamedTuple):
    q: np.ndarray  # int8
    scale: float


def _write_tensor(fh, name: str, value) -> None:
    nb = name.encode()
    fh.write(struct.pack("<H", len(nb)))
    fh.write(nb)
    if isinstance(value, QuantizedTensor):
        code, payload, scale = _DTYPE_I8, value.q.astype("<i1").tobytes(), value.scale
        shape = value.q.shape
    else:
        arr = np.asarray(value)
        if arr.dtype == np.float32:
            code, payload = _DTYPE_F32, arr.astype("<f4").tobytes()
        else:
            code, payload = _DTYPE_F64, arr.astype("<f8").tobytes()
        scale, shape = 0.0, arr.shape
    fh.write(struct.pack("<B", code))
    fh.write(struct.pack("<B", len(shape)))
    for extent in shape:
        fh.write(struct.pack("<I", extent))
    if code == _DTYPE_I8:
        fh.write(struct.pack("<d", scale))
    fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))
    fh.write(struct.pack("<Q", len(payload)))
    fh.write(payload)


def tensor_entry_overhead(name: str, ndim: int, quantized: bool) -> int:
    """Bytes a tensor entry occupies beyond its raw payload."""
    return 2 + len(name.encode()) + 1 + 1 + 4 * ndim + (8 if quantized else 0) + 4 + 8


def save_model(path, params: dict, config_text: str) -> None:
    cfg_bytes = config_text.encode()
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<B", MODEL_VERSION))
        fh.write(struct.pack("<I", len(cfg_bytes)))
        fh.write(cfg_bytes)
        names = sorted(params)
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            _write_tensor(fh, name, params[name])


def _read_exact(fh, n: int) -> bytes:
    b = fh.read(n)
    if len(b) != n:
        raise ModelFileError("truncated model file")
    return b


def load_model(path) -> tuple[dict, str]:
    """Returns (params, config_text); values are ndarrays or QuantizedTensor."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 5) != MODEL_MAGIC:
            raise ModelFileError("bad model magic")
        (version,) = struct.unpack("<B", _read_exact(fh, 1))
        if version != MODEL_VERSION:
            raise ModelFileError(f"unsupported model version {version}")
        (cfg_len,) = struct.unpack("<I", _read_exact(fh, 4))
        config_text = _read_exact(fh, cfg_len).decode()
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        params: dict = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, name_len).decode()
            (code,) = struct.unpack("<B", _read_exact(fh, 1))
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
            shape = tuple(struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(ndim))
            scale = struct.unpack("<d", _read_exact(fh, 8))[0] if code == _DTYPE_I8 else None
            (crc,) = struct.unpack("<I", _read_exact(fh, 4))
            (plen,) = struct.unpack("<Q", _read_exact(fh, 8))
            payload = _read_exact(fh, plen)
            if zlib.crc32(payload) & 0xFFFFFFFF != crc:
                raise ModelFileError(f"checksum mismatch for tensor {name!r}")
            if code == _DTYPE_F32:
                params[name] = np.frombuffer(payload, "<f4").reshape(shape).copy()
            elif code == _DTYPE_F64:
                params[name] = np.frombuffer(payload, "<f8").reshape(shape).copy()
            elif code == _DTYPE_I8:
                params[name] = QuantizedTensor(
                    np.frombuffer(payload, "<i1").reshape(shape).copy(), scale)
            else:
                raise ModelFileError(f"unknown dtype code {code}")
    return params, config_text


# ---------------------------------------------------------------------------
# int8 post-training quantization

def quantize_tensor(w: np.ndarray) -> QuantizedTensor:
    """Symmetric per-tensor linear quantization: scale = max|w| / 127.

    All-zero tensors get scale 1.0 so dequantization is well defined.
    """
    peak = float(np.abs(w).max()) if w.size else 0.0
    scale = peak / 127.0 if peak > 0 else 1.0
    q = np.clip(np.round(w / scale), -127, 127).astype(np.int8)
    return QuantizedTensor(q, scale)


def dequantize_tensor(qt: QuantizedTensor, dtype=np.float64) -> np.ndarray:
    return qt.q.astype(dtype) * qt.scale


def quantize_params(params: dict) -> dict[str, QuantizedTensor]:
    return {name: quantize_tensor(np.asarray(w)) for name, w in params.items()}


def dequantize_params(qparams: dict, dtype=np.float64) -> dict[str, np.ndarray]:
    return {name: dequantize_tensor(qt, dtype) for name, qt in qparams.items()}


def quantized_size_report(qparams: dict, config_text: str) -> dict:
    """Accounting identity for the on-disk size of a quantized model."""
    payload = sum(int(qt.q.size) for qt in qparams.values())
    overhead = sum(tensor_entry_overhead(name, qt.q.ndim, True)
                   for name, qt in qparams.items())
    header = 5 + 1 + 4 + len(config_text.encode()) + 4
    return {
        "payload_bytes": payload,
        "tensor_overhead_bytes": overhead,
        "header_bytes": header,
        "total_bytes": payload + overhead + header,
    }
