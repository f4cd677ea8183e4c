"""Binary containers and previews.

TXD1 (one tensor), little-endian::

    magic   4 bytes  b"TXD1"
    dtype   uint32   1 = float32, 2 = float64, 3 = uint8, 4 = int64
    ndim    uint32
    dims    ndim x uint64
    payload row-major values

TXDW (named tensors, used for checkpoints)::

    magic   4 bytes  b"TXDW"
    count   uint32
    count x { name_len uint16, name utf-8, dtype uint32, ndim uint32,
              dims ndim x uint64, payload }

The TXDW entry named ``__meta__`` (uint8) holds a UTF-8 JSON document.
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2, np.dtype("u1"): 3, np.dtype("<i8"): 4}
_DTYPES = {v: k for k, v in _CODES.items()}
META_KEY = "__meta__"


class ContainerError(ValueError):
    pass


def _write_array(fh, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.itemsize > 1 else arr.dtype
    if dt not in _CODES:
        raise ContainerError(f"unsupported dtype {arr.dtype}")
    fh.write(struct.pack("<II", _CODES[dt], arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype=dt).tobytes())


def _read_array(fh) -> np.ndarray:
    head = fh.read(8)
    if len(head) != 8:
        raise ContainerError("truncated tensor header")
    code, ndim = struct.unpack("<II", head)
    if code not in _DTYPES:
        raise ContainerError(f"unknown dtype code {code}")
    dims = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
    dt = _DTYPES[code]
    count = int(np.prod(dims)) if ndim else 1
    buf = fh.read(count * dt.itemsize)
    if len(buf) != count * dt.itemsize:
        raise ContainerError("truncated tensor payload")
    return np.frombuffer(buf, dtype=dt).reshape(dims).copy()


def save_txd(path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(b"TXD1")
        _write_array(fh, arr)


def load_txd(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(4) != b"TXD1":
            raise ContainerError(f"{path}: not a TXD1 container")
        return _read_array(fh)


def save_txdw(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    items = list(tensors.items())
    if meta is not None:
        items.append((META_KEY, np.frombuffer(json.dumps(meta, sort_keys=True).encode(), np.uint8)))
    buf = io.BytesIO()
    buf.write(b"TXDW")
    buf.write(struct.pack("<I", len(items)))
    for name, arr in items:
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        _write_array(buf, arr)
    Path(path).write_bytes(buf.getvalue())


def load_txdw(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        if fh.read(4) != b"TXDW":
            raise ContainerError(f"{path}: not a TXDW container")
        (count,) = struct.unpack("<I", fh.read(4))
        tensors = {}
        for _ in range(count):
            (n,) = struct.unpack("<H", fh.read(2))
            name = fh.read(n).decode()
            tensors[name] = _read_array(fh)
    meta = {}
    if META_KEY in tensors:
        meta = json.loads(tensors.pop(META_KEY).tobytes().decode())
    return tensors, meta


def write_jsonl(path, rows) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def save_pgm(path, image: np.ndarray, scale: int = 1, vmin: float | None = None,
             vmax: float | None = None) -> None:
    """Binary portable graymap scaled to 0..255 (min-max unless a range is given); ``scale`` repeats pixels."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ContainerError(f"PGM needs a 2-D array, got {img.shape}")
    lo = img.min() if vmin is None else vmin
    hi = img.max() if vmax is None else vmax
    norm = np.zeros_like(img) if hi == lo else np.clip((img - lo) / (hi - lo), 0.0, 1.0)
    px = np.round(norm * 255).astype(np.uint8)
    if scale > 1:
        px = np.kron(px, np.ones((scale, scale), dtype=np.uint8))
    with open(path, "wb") as fh:
        fh.write(f"P5\n{px.shape[1]} {px.shape[0]}\n255\n".encode())
        fh.write(px.tobytes())


def load_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ContainerError(f"{path}: not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)
