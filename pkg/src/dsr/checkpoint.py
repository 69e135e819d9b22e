"""Versioned binary container for parameters and training state.

Layout: magic, little-endian uint64 header length, JSON header, raw payload.
The header records the array table (name/shape/dtype in payload order), free
form metadata and a SHA-256 of the payload, so round trips are bit-exact and
corruption or version drift is detected at load time.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import (
    CheckpointChecksumError,
    CheckpointError,
    CheckpointVersionError,
    MissingFileError,
)

MAGIC = b"DSRCKPT1\n"
FORMAT_VERSION = 1


def save_arrays(path, arrays: dict, meta: dict | None = None) -> None:
    """Write named arrays plus JSON metadata to ``path``."""
    table = []
    blobs = []
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        table.append(
            {"name": name, "shape": list(arr.shape), "dtype": str(arr.dtype)}
        )
        blobs.append(np.ascontiguousarray(arr).tobytes())
    payload = b"".join(blobs)
    header = {
        "version": FORMAT_VERSION,
        "arrays": table,
        "meta": meta or {},
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def load_arrays(path) -> tuple[dict, dict]:
    """Read back (arrays, meta); raises distinct errors per failure mode."""
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    offset = len(MAGIC)
    (header_len,) = struct.unpack_from("<Q", raw, offset)
    offset += 8
    try:
        header = json.loads(raw[offset : offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: version {header.get('version')} != {FORMAT_VERSION}"
        )
    payload = raw[offset + header_len :]
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header["payload_sha256"]:
        raise CheckpointChecksumError(f"{path}: payload checksum mismatch")
    arrays = {}
    cursor = 0
    for item in header["arrays"]:
        dtype = np.dtype(item["dtype"])
        count = int(np.prod(item["shape"])) if item["shape"] else 1
        nbytes = count * dtype.itemsize
        arr = np.frombuffer(payload[cursor : cursor + nbytes], dtype=dtype)
        arrays[item["name"]] = arr.reshape(item["shape"]).copy()
        cursor += nbytes
    if cursor != len(payload):
        raise CheckpointError(f"{path}: payload length mismatch")
    return arrays, header["meta"]
