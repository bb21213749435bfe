"""Versioned binary container for named tensors.

Used for model checkpoints, optimizer/train state and persisted
spectrograms. Byte layout, in file order:

    bytes 0..3    magic ``b"AVXC"``
    bytes 4..7    format version, uint32 little-endian (currently 1)
    bytes 8..15   header length ``H`` in bytes, uint64 little-endian
    bytes 16..16+H-1   header, UTF-8 JSON with sorted keys:
                  ``{"meta": {...}, "tensors": [{"crc32": int,
                  "dtype": str, "name": str, "nbytes": int,
                  "offset": int, "shape": [int, ...]}, ...]}``
    remainder     tensor payloads, raw little-endian array bytes in
                  C order, concatenated at the listed offsets
                  (relative to the end of the header)

``meta`` is caller-defined JSON. Offsets are assigned in the order the
tensors are given; readers must use the header offsets, not order.
Every tensor block carries a CRC-32 so corruption is attributable to a
named tensor.
"""

from __future__ import annotations

import json
import zlib
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"AVXC"
FORMAT_VERSION = 1


def write_container(path, tensors, meta=None):
    """Write named arrays plus a JSON ``meta`` block to ``path``.

    ``tensors`` is a mapping name -> ndarray. Arrays are stored as
    little-endian C-order payloads; dtype and shape round-trip exactly.
    """
    path = Path(path)
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        entries.append(
            {
                "name": str(name),
                "dtype": arr.dtype.name,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
                "crc32": zlib.crc32(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"meta": meta or {}, "tensors": entries}, sort_keys=True
    ).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(FORMAT_VERSION).tobytes())
        fh.write(np.uint64(len(header)).tobytes())
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def read_container(path):
    """Read a container, returning ``(tensors, meta)``.

    Raises CheckpointError for a missing file, bad magic, unsupported
    version, truncated payload or a CRC mismatch (naming the tensor).
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no such file: {path}")
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16 or data[:4] != MAGIC:
        raise CheckpointError(f"not a container file: {path}")
    version = int(np.frombuffer(data[4:8], dtype="<u4")[0])
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported container version {version} (expected {FORMAT_VERSION})"
        )
    header_len = int(np.frombuffer(data[8:16], dtype="<u8")[0])
    try:
        header = json.loads(data[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt container header: {exc}") from exc
    payload = data[16 + header_len :]
    tensors = {}
    for entry in header["tensors"]:
        name = entry["name"]
        start, nbytes = entry["offset"], entry["nbytes"]
        raw = payload[start : start + nbytes]
        if len(raw) != nbytes:
            raise CheckpointError(f"tensor '{name}' truncated in {path}")
        if zlib.crc32(raw) != entry["crc32"]:
            raise CheckpointError(f"tensor '{name}' corrupted in {path}")
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"]).newbyteorder("<"))
        tensors[name] = arr.reshape(entry["shape"]).astype(entry["dtype"])
    return tensors, header["meta"]
