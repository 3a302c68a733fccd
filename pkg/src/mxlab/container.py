"""MXL1 binary container and the text manifests that sit next to it.

Record layout (little-endian)::

    b"MXL1" | version:u16 | ndim:u16 | dims:u32 * ndim | payload

The payload is the row-major array as interleaved (real, imag) float32 pairs.
Checkpoints are a name table followed by one record per tensor.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MXL1"
VERSION = 1
_ELEM = np.dtype("<c8")


class ContainerError(ValueError):
    pass


def _header(dims) -> bytes:
    dims = [int(d) for d in dims]
    return MAGIC + struct.pack("<HH", VERSION, len(dims)) + struct.pack(f"<{len(dims)}I", *dims)


def encode(array) -> bytes:
    a = np.ascontiguousarray(np.asarray(array), dtype=_ELEM)
    return _header(a.shape) + a.tobytes()


def _read_header(fh):
    head = fh.read(8)
    if len(head) < 8 or head[:4] != MAGIC:
        raise ContainerError("not an MXL1 record (bad magic)")
    version, ndim = struct.unpack("<HH", head[4:])
    if version != VERSION:
        raise ContainerError(f"unsupported MXL version {version}")
    raw = fh.read(4 * ndim)
    if len(raw) != 4 * ndim:
        raise ContainerError("truncated header")
    return list(struct.unpack(f"<{ndim}I", raw))


def _read_record(fh) -> np.ndarray:
    dims = _read_header(fh)
    count = int(np.prod(dims, dtype=np.int64))
    buf = fh.read(count * _ELEM.itemsize)
    if len(buf) != count * _ELEM.itemsize:
        raise ContainerError(f"payload truncated: expected {count} elements")
    return np.frombuffer(buf, dtype=_ELEM).reshape(dims).astype(np.complex128)


def write_array(path, array) -> None:
    Path(path).write_bytes(encode(array))


def read_array(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return _read_record(fh)


def read_dims(path) -> list[int]:
    with open(path, "rb") as fh:
        return _read_header(fh)


class StreamWriter:
    """Write a record whose leading axis is appended chunk by chunk."""

    def __init__(self, path, dims):
        self.path = Path(path)
        self.dims = [int(d) for d in dims]
        self._rows = 0
        self._fh = open(self.path, "wb")
        self._fh.write(_header(self.dims))

    def append(self, chunk) -> None:
        chunk = np.ascontiguousarray(np.asarray(chunk), dtype=_ELEM)
        if list(chunk.shape) != self.dims[1:]:
            raise ContainerError(f"chunk shape {list(chunk.shape)} != {self.dims[1:]}")
        self._fh.write(chunk.tobytes())
        self._rows += 1

    def close(self) -> None:
        self._fh.close()
        if self._rows != self.dims[0]:
            raise ContainerError(f"wrote {self._rows} rows, header declares {self.dims[0]}")

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if exc[0] is None:
            self.close()
        else:
            self._fh.close()


def save_tensors(path, tensors: dict) -> None:
    """Name table (JSON, length-prefixed) followed by one record per tensor."""
    names = list(tensors)
    table = json.dumps(names).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<HI", VERSION, len(table)) + table)
        for name in names:
            fh.write(encode(tensors[name]))


def load_tensors(path) -> dict:
    with open(path, "rb") as fh:
        head = fh.read(10)
        if len(head) < 10 or head[:4] != MAGIC:
            raise ContainerError(f"{path}: not an MXL1 checkpoint")
        _, n = struct.unpack("<HI", head[4:])
        names = json.loads(fh.read(n))
        return {name: _read_record(fh).real.copy() for name in names}


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(path, entries: dict) -> None:
    """Flat ``key = value`` manifest; values are JSON-encoded."""
    lines = [f"{k} = {json.dumps(_plain(v))}" for k, v in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ContainerError(f"{path}:{lineno}: expected 'key = value'")
        out[key.strip()] = json.loads(value.strip())
    return out


def _plain(v):
    if isinstance(v, np.ndarray):
        if np.iscomplexobj(v):
            return [[float(x.real), float(x.imag)] for x in v.ravel()]
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, complex):
        return [v.real, v.imag]
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v
