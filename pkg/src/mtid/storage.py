"""Flat-file array bundles: a JSON manifest plus one raw little-endian binary per array.

Bundles are directories. The manifest records dtype, shape, byte order and a
sha256 checksum per array, so loads can distinguish version mismatch,
truncation and corruption. Round-trips are bit-exact.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"


class StorageError(Exception):
    """Base class for bundle load failures."""


class VersionMismatchError(StorageError):
    pass


class TruncatedFileError(StorageError):
    pass


class ChecksumError(StorageError):
    pass


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def save_bundle(path, arrays: dict, meta: dict | None = None) -> None:
    """Write named arrays plus free-form metadata under `path` (created if needed)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        # normalize to little-endian on disk
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        raw = arr.tobytes()
        fname = name + ".bin"
        (path / fname).write_bytes(raw)
        entries[name] = {
            "file": fname,
            "dtype": arr.dtype.str.lstrip("<=|"),
            "shape": list(arr.shape),
            "byte_order": "little",
            "sha256": _sha256(raw),
        }
    manifest = {
        "format_version": FORMAT_VERSION,
        "arrays": entries,
        "meta": meta or {},
    }
    (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_bundle(path):
    """Read a bundle back; returns (arrays, meta). Raises a distinct error per failure mode."""
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.exists():
        raise StorageError(f"no manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"bundle format {version}, expected {FORMAT_VERSION}")
    arrays = {}
    for name, entry in manifest["arrays"].items():
        fpath = path / entry["file"]
        if not fpath.exists():
            raise TruncatedFileError(f"missing array file {fpath}")
        raw = fpath.read_bytes()
        dtype = np.dtype(entry["dtype"]).newbyteorder("<")
        expected = int(np.prod(entry["shape"])) * dtype.itemsize if entry["shape"] else dtype.itemsize
        if len(raw) != expected:
            raise TruncatedFileError(
                f"{fpath}: {len(raw)} bytes, expected {expected}"
            )
        if _sha256(raw) != entry["sha256"]:
            raise ChecksumError(f"checksum mismatch for {fpath}")
        arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(entry["shape"]).copy()
    return arrays, manifest.get("meta", {})
