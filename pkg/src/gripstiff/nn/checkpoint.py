"""SGNN checkpoint container.

Layout (little-endian)::

    b"SGNN"            magic
    u16                format version (1)
    u32                header length, then that many bytes of UTF-8 JSON
    u32                parameter count
    per parameter:
        u16 + bytes    UTF-8 name
        u8             number of dimensions
        u32 * ndim     dimensions
        f64 * prod     values, row-major
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from ..errors import ParseError, VersionError

MAGIC = b"SGNN"
VERSION = 1


def encode_checkpoint(params, header: dict | None = None) -> bytes:
    head = json.dumps(header or {}, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(head)), head, struct.pack("<I", len(params))]
    for name, value in params.items():
        arr = np.asarray(getattr(value, "value", value), dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes, path=None):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise ParseError(f"truncated checkpoint while reading {what}", offset=self.pos, path=self.path)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(data: bytes, path=None) -> tuple[dict, "OrderedDict[str, np.ndarray]"]:
    r = _Reader(data, path)
    if r.take(4, "magic") != MAGIC:
        raise ParseError("not an SGNN checkpoint (bad magic)", offset=0, path=path)
    (version,) = r.unpack("<H", "version")
    if version != VERSION:
        raise VersionError(f"unsupported SGNN version {version}", offset=4, path=path)
    (hlen,) = r.unpack("<I", "header length")
    start = r.pos
    try:
        header = json.loads(r.take(hlen, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"invalid checkpoint header: {exc}", offset=start, path=path) from None
    (count,) = r.unpack("<I", "parameter count")
    params = OrderedDict()
    for _ in range(count):
        (nlen,) = r.unpack("<H", "name length")
        at = r.pos
        try:
            name = r.take(nlen, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise ParseError("invalid parameter name", offset=at, path=path) from None
        (ndim,) = r.unpack("<B", "ndim")
        dims = r.unpack(f"<{ndim}I", "dimensions") if ndim else ()
        n = int(np.prod(dims)) if dims else 1
        values = np.frombuffer(r.take(8 * n, f"values of {name}"), dtype="<f8").astype(np.float64)
        params[name] = values.reshape(dims)
    if r.pos != len(data):
        raise ParseError("trailing bytes after last parameter", offset=r.pos, path=path)
    return header, params


def save_checkpoint(path, params, header: dict | None = None) -> None:
    Path(path).write_bytes(encode_checkpoint(params, header))


def load_checkpoint(path):
    path = Path(path)
    return decode_checkpoint(path.read_bytes(), path)
