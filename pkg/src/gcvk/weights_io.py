"""Binary weights file.

Layout (all integers little-endian):
  magic "GCVK" | u32 version=1 | u32 tensor count
  per tensor: u16 name length | UTF-8 name | u8 dtype (0=f32, 1=f64)
              | u8 rank | rank x u32 extents | payload, row-major LE

Round trips are bit-exact; import validates the whole file against the
target model before touching any weight.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError
from .nn import Module

MAGIC = b"GCVK"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def save_weights(model: Module, path: str) -> None:
    entries = list(model.named_parameters())
    names = [n for n, _ in entries]
    if len(set(names)) != len(names):
        raise FormatError("duplicate parameter names in model")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(entries)))
        for name, p in entries:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            code = _CODES[np.dtype(p.dtype)]
            fh.write(struct.pack("<BB", code, p.data.ndim))
            fh.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
            fh.write(np.ascontiguousarray(
                p.data, dtype=_DTYPES[code]).tobytes())


def _read(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated weights file while reading {what}")
    return buf


def read_weights(path: str) -> dict[str, np.ndarray]:
    tensors: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        if _read(fh, 4, "magic") != MAGIC:
            raise FormatError("bad magic bytes; not a weights file")
        version, count = struct.unpack("<II", _read(fh, 8, "header"))
        if version != VERSION:
            raise FormatError(f"unsupported weights version {version}")
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read(fh, 2, "name length"))
            name = _read(fh, nlen, "name").decode("utf-8")
            code, rank = struct.unpack("<BB", _read(fh, 2, "tensor header"))
            if code not in _DTYPES:
                raise FormatError(f"tensor {name}: unknown dtype code {code}")
            shape = struct.unpack(f"<{rank}I", _read(fh, 4 * rank, "extents"))
            dtype = _DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            payload = _read(fh, nbytes, f"tensor {name} payload")
            if name in tensors:
                raise FormatError(f"tensor name collision in file: {name}")
            tensors[name] = np.frombuffer(payload, dtype=dtype).reshape(shape)
        if fh.read(1):
            raise FormatError("trailing bytes after last tensor")
    return tensors


def load_weights(model: Module, path: str) -> None:
    """Validate the file against the model, then assign every weight."""
    tensors = read_weights(path)
    entries = list(model.named_parameters())
    missing = [n for n, _ in entries if n not in tensors]
    if missing:
        raise FormatError(f"weights file lacks tensors: {missing[:5]}")
    extra = set(tensors) - {n for n, _ in entries}
    if extra:
        raise FormatError(f"weights file has unknown tensors: "
                          f"{sorted(extra)[:5]}")
    for name, p in entries:
        arr = tensors[name]
        if arr.shape != p.data.shape:
            raise FormatError(
                f"tensor {name}: file shape {arr.shape} != model shape "
                f"{p.data.shape}")
        if arr.dtype != p.data.dtype:
            raise FormatError(
                f"tensor {name}: file dtype {arr.dtype} != model dtype "
                f"{p.data.dtype}")
    for name, p in entries:
        p.data = tensors[name].copy()
