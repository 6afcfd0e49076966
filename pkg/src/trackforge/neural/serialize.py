"""Binary weight files.

Layout (little-endian)::

    b"TFWT" | u32 version | u32 len + utf-8 architecture | u32 layer count
    per layer: u32 len + utf-8 name | u32 array count
               per array: u32 ndim | u32 dims...
               then the layer's arrays as row-major float64, declaration order
    u32 CRC32 of everything after the header
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from ..errors import FormatError

MAGIC = b"TFWT"
VERSION = 1


def _group(params: dict) -> dict[str, list[tuple[str, np.ndarray]]]:
    layers: dict[str, list[tuple[str, np.ndarray]]] = {}
    for key, arr in params.items():
        layers.setdefault(key.split(".", 1)[0], []).append((key, arr))
    return layers


def dumps(architecture: str, params: dict) -> bytes:
    arch = architecture.encode()
    layers = _group(params)
    head = MAGIC + struct.pack("<II", VERSION, len(arch)) + arch + struct.pack("<I", len(layers))
    body = bytearray()
    for name, arrays in layers.items():
        nb = name.encode()
        body += struct.pack("<I", len(nb)) + nb + struct.pack("<I", len(arrays))
        for _, a in arrays:
            body += struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
        for _, a in arrays:
            body += np.ascontiguousarray(a, dtype="<f8").tobytes()
    return head + bytes(body) + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf: bytes, pos: int = 0):
        self.buf, self.pos = buf, pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("weight file truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, n: int = 1):
        vals = struct.unpack(f"<{n}I", self.take(4 * n))
        return vals[0] if n == 1 else vals


def loads(buf: bytes) -> tuple[str, dict[str, list[np.ndarray]]]:
    """Parse a weight file into ``(architecture, {layer: [arrays]})``."""
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise FormatError("bad magic; not a trackforge weight file")
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"unsupported weight format version {version}")
    arch = r.take(r.u32()).decode()
    n_layers = r.u32()
    body_start = r.pos
    layers: dict[str, list[np.ndarray]] = {}
    for _ in range(n_layers):
        name = r.take(r.u32()).decode()
        count = r.u32()
        shapes = []
        for _ in range(count):
            nd = r.u32()
            shapes.append(tuple(r.u32(nd)) if nd > 1 else ((r.u32(),) if nd == 1 else ()))
        arrays = []
        for shp in shapes:
            n = int(np.prod(shp)) if shp else 1
            arrays.append(np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64).reshape(shp))
        layers[name] = arrays
    body = buf[body_start:r.pos]
    crc = r.u32()
    if crc != zlib.crc32(body):
        raise FormatError("CRC mismatch; weight file corrupted")
    if r.pos != len(buf):
        raise FormatError("trailing bytes after CRC")
    return arch, layers


def save_weights(model, path: str | Path) -> None:
    Path(path).write_bytes(dumps(model.architecture, model.params))


def assign(model, arch: str, layers: dict[str, list[np.ndarray]]) -> None:
    """Copy parsed arrays into ``model.params``, checking every dimension."""
    if arch != model.architecture:
        raise FormatError(f"architecture {arch!r} does not match expected {model.architecture!r}")
    expected = _group(model.params)
    if list(layers) != list(expected):
        raise FormatError(f"layer list {list(layers)} does not match expected {list(expected)}")
    for name, arrays in expected.items():
        got = layers[name]
        if len(got) != len(arrays):
            raise FormatError(f"layer {name}: {len(got)} arrays, expected {len(arrays)}")
        for (key, want), a in zip(arrays, got):
            if a.shape != want.shape:
                raise FormatError(f"layer {name}: {key} has dims {a.shape}, expected {want.shape}")
    for name, arrays in expected.items():
        for (key, _), a in zip(arrays, layers[name]):
            model.params[key][...] = a


def load_weights(path: str | Path, model=None):
    """Load weights into ``model`` or, if omitted, build one from the architecture string."""
    arch, layers = loads(Path(path).read_bytes())
    if model is None:
        from ..models import build_model

        model = build_model(arch)
    assign(model, arch, layers)
    return model
