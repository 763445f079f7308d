"""Byte-stable array container: one JSON header line followed by raw
little-endian array payloads. Unlike npz it carries no timestamps, so equal
models serialize to equal bytes."""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np


def dumps(arrays: dict, meta: dict | None = None) -> bytes:
    entries, payload, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        data = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        entries.append({"name": name, "dtype": arr.dtype.str.lstrip("<>|="), "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(data)})
        payload.append(data)
        offset += len(data)
    header = json.dumps({"meta": meta or {}, "arrays": entries}, sort_keys=True, separators=(",", ":"))
    return header.encode("utf-8") + b"\n" + b"".join(payload)


def loads(raw: bytes) -> tuple[dict, dict]:
    head, _, body = raw.partition(b"\n")
    header = json.loads(head)
    arrays = {}
    for e in header["arrays"]:
        chunk = body[e["offset"]:e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(chunk, dtype=np.dtype(e["dtype"]).newbyteorder("<")).reshape(e["shape"]).copy()
    return arrays, header["meta"]


def save(path, arrays: dict, meta: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "wb") as fh:
        fh.write(dumps(arrays, meta))
    os.replace(tmp, path)


def load(path) -> tuple[dict, dict]:
    return loads(Path(path).read_bytes())
