"""Deterministic single-file container for named float/int arrays.

``numpy.savez`` embeds zip timestamps, so identical inputs do not produce
byte-identical files. This container does: a magic string, a length-prefixed
canonical-JSON header (format version, user metadata, array manifest, payload
checksum), then the raw C-order array bytes. Loading verifies the magic, the
version, and the SHA-256 of the payload, so truncation or corruption fails
loudly instead of yielding partial state.
"""

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import IntegrityError, VersionError

__all__ = ["save_arrays", "load_arrays", "FORMAT_VERSION"]

_MAGIC = b"CRXCARR1"
FORMAT_VERSION = 1

_ALLOWED_DTYPES = {"float64", "int64"}


def save_arrays(path, arrays: dict, meta: dict | None = None) -> None:
    """Write named arrays plus a JSON-serializable metadata dict to ``path``."""
    manifest = []
    chunks = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype.name not in _ALLOWED_DTYPES:
            arr = arr.astype(np.float64)
        manifest.append({"name": name, "dtype": arr.dtype.name, "shape": list(arr.shape)})
        chunks.append(arr.tobytes(order="C"))
    payload = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "meta": meta or {},
        "arrays": manifest,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def load_arrays(path, expected_version: int = FORMAT_VERSION):
    """Read a container, returning ``(arrays, meta)``; verifies the checksum."""
    raw = Path(path).read_bytes()
    if len(raw) < len(_MAGIC) + 8 or raw[: len(_MAGIC)] != _MAGIC:
        raise IntegrityError(f"{path}: not a crossrec array container")
    offset = len(_MAGIC)
    (header_len,) = struct.unpack("<Q", raw[offset:offset + 8])
    offset += 8
    if len(raw) < offset + header_len:
        raise IntegrityError(f"{path}: truncated header")
    try:
        header = json.loads(raw[offset:offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"{path}: corrupt header ({exc})") from exc
    offset += header_len
    version = header.get("format_version")
    if version != expected_version:
        raise VersionError(
            f"{path}: format version {version!r} unsupported (expected {expected_version})"
        )
    payload = raw[offset:]
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise IntegrityError(f"{path}: payload checksum mismatch (truncated or corrupted)")
    arrays = {}
    pos = 0
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(payload[pos:pos + nbytes], dtype=dtype).reshape(shape).copy()
        arrays[entry["name"]] = arr
        pos += nbytes
    return arrays, header["meta"]
