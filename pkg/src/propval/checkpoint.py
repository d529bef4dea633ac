"""Versioned binary container of named float arrays.

Layout (all integers little-endian)::

    offset 0   8 bytes   magic  b"PVCKPT\\x00\\x01"
    offset 8   u32       format version
    offset 12  u64       header length L
    offset 20  L bytes   UTF-8 JSON header
    offset 20+L          array payloads, back to back

The header holds ``meta`` (free-form JSON) and ``arrays``: a list of
``{name, dtype, shape, offset, nbytes, crc32}`` where ``offset`` is relative
to the start of the payload section.  Every problem found while reading is
reported with the byte offset at which it was detected.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"PVCKPT\x00\x01"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    def __init__(self, message: str, offset: int | None = None):
        where = f" at byte {offset}" if offset is not None else ""
        super().__init__(f"{message}{where}")
        self.offset = offset


class CheckpointVersionError(CheckpointError):
    pass


def write_container(path: str | Path, arrays: Mapping[str, np.ndarray], meta: dict) -> None:
    entries, blobs, pos = [], [], 0
    for name in arrays:
        a = np.ascontiguousarray(arrays[name])
        if a.dtype.kind not in "fiub":
            raise TypeError(f"array {name!r} has unsupported dtype {a.dtype}")
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = a.tobytes()
        entries.append({
            "name": name,
            "dtype": a.dtype.str,
            "shape": list(a.shape),
            "offset": pos,
            "nbytes": len(raw),
            "crc32": zlib.crc32(raw),
        })
        blobs.append(raw)
        pos += len(raw)
    header = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def read_container(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    buf = Path(path).read_bytes()
    if len(buf) < _PREFIX.size:
        raise CheckpointError(f"file too short for the {_PREFIX.size}-byte prefix", len(buf))
    magic, version, hlen = _PREFIX.unpack_from(buf, 0)
    if magic != MAGIC:
        raise CheckpointError("bad magic, not a checkpoint file", 0)
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format version {version}, this build reads version {FORMAT_VERSION}", 8
        )
    start = _PREFIX.size
    if start + hlen > len(buf):
        raise CheckpointError(f"header of {hlen} bytes runs past end of file ({len(buf)} bytes)", 12)
    try:
        header = json.loads(buf[start : start + hlen].decode("utf-8"))
        entries, meta = header["arrays"], header["meta"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CheckpointError(f"unreadable header ({exc.__class__.__name__})", start) from None
    base = start + hlen
    arrays = {}
    for e in entries:
        at = base + int(e["offset"])
        end = at + int(e["nbytes"])
        if end > len(buf):
            raise CheckpointError(f"array {e['name']!r} truncated (needs bytes up to {end})", len(buf))
        raw = buf[at:end]
        if zlib.crc32(raw) != e["crc32"]:
            raise CheckpointError(f"checksum mismatch in array {e['name']!r}", at)
        arrays[e["name"]] = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return arrays, meta
