"""Versioned binary checkpoint container for :class:`~unrolled.blocks.Network`.

Layout::

    8 bytes   magic b"UNRLCKPT"
    4 bytes   format version, little-endian uint32
    8 bytes   header length N, little-endian uint64
    N bytes   UTF-8 JSON header (network spec, parameter names and shapes,
              identity blocks), keys sorted
    rest      every parameter array in header order, row-major little-endian float64

The writer emits no timestamps, so identical networks give identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .blocks import Network, NetworkSpec

MAGIC = b"UNRLCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def to_bytes(net: Network) -> bytes:
    header = {
        "spec": net.spec.to_dict(),
        "params": [[k, list(v.shape)] for k, v in net.params.items()],
        "identity_blocks": sorted([list(b) for b in net.identity_blocks]),
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in net.params.values())
    return MAGIC + struct.pack("<IQ", VERSION, len(head)) + head + body


def from_bytes(raw: bytes) -> Network:
    if raw[:8] != MAGIC:
        raise CheckpointError("not a network checkpoint (bad magic)")
    if len(raw) < 20:
        raise CheckpointError("checkpoint truncated")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if 20 + hlen > len(raw):
        raise CheckpointError("checkpoint truncated inside header")
    try:
        header = json.loads(raw[20 : 20 + hlen].decode("utf-8"))
        spec = NetworkSpec.from_dict(header["spec"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise CheckpointError(f"corrupt checkpoint header: {e}") from None
    params, off = {}, 20 + hlen
    for name, shape in header["params"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if off + nbytes > len(raw):
            raise CheckpointError(f"checkpoint truncated inside {name}")
        params[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=off).astype(np.float64).reshape(shape)
        off += nbytes
    if off != len(raw):
        raise CheckpointError("trailing bytes after parameter data")
    identity = frozenset(tuple(b) for b in header["identity_blocks"])
    return Network(spec, params, identity)


def save(net: Network, path) -> None:
    Path(path).write_bytes(to_bytes(net))


def load(path) -> Network:
    return from_bytes(Path(path).read_bytes())
