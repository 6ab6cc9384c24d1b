"""Self-describing checkpoint container for a ParamStore.

Layout: one JSON header line (format tag, version, RNG seed, caller meta,
tensor table with byte offsets, blob checksum) followed by the raw
little-endian concatenation of all tensors in table order.  Round-trips
are bit-exact and writes are deterministic (sorted tensor order, canonical
JSON), so identical training runs produce identical files.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from ..errors import DataError
from .layers import ParamStore

FORMAT_TAG = "terrapilot-checkpoint"
FORMAT_VERSION = 1


def _le(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    if arr.dtype.byteorder == ">":
        arr = arr.astype(arr.dtype.newbyteorder("<"))
    return arr


def save_checkpoint(store: ParamStore, path: str | Path, seed: int,
                    meta: dict | None = None) -> None:
    path = Path(path)
    table = []
    chunks = []
    offset = 0
    for name in sorted(store.names()):
        arr = _le(store[name].data)
        raw = arr.tobytes()
        table.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": arr.dtype.str.lstrip("<=|"),
            "offset": offset,
            "nbytes": len(raw),
            "trainable": store.is_trainable(name),
        })
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    header = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "seed": int(seed),
        "meta": meta or {},
        "tensors": table,
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
    }
    header_line = json.dumps(header, sort_keys=True, separators=(",", ":"))
    with open(path, "wb") as fh:
        fh.write(header_line.encode("utf-8"))
        fh.write(b"\n")
        fh.write(blob)


def load_checkpoint(path: str | Path) -> tuple[ParamStore, int, dict]:
    """Returns (store, seed, meta); raises DataError on any corruption."""
    path = Path(path)
    with open(path, "rb") as fh:
        header_line = fh.readline()
        blob = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"unreadable checkpoint header in {path}: {exc}") from exc
    if header.get("format") != FORMAT_TAG:
        raise DataError(f"{path} is not a {FORMAT_TAG} file")
    if header.get("version") != FORMAT_VERSION:
        raise DataError(
            f"checkpoint version {header.get('version')} unsupported (want {FORMAT_VERSION})")
    digest = hashlib.sha256(blob).hexdigest()
    if digest != header["blob_sha256"]:
        raise DataError(f"checkpoint blob checksum mismatch in {path}")
    store = ParamStore()
    for entry in header["tensors"]:
        dtype = np.dtype(entry["dtype"]).newbyteorder("<")
        start, nbytes = entry["offset"], entry["nbytes"]
        arr = np.frombuffer(blob[start:start + nbytes], dtype=dtype)
        arr = arr.reshape(entry["shape"]).astype(dtype.newbyteorder("="))
        store.add(entry["name"], arr, trainable=entry["trainable"])
    return store, int(header["seed"]), header.get("meta", {})
