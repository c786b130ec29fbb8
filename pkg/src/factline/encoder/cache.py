"""Binary embedding store: little-endian (count, dim) header, float32 rows, JSONL text index."""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np

from factline.text import sha256_hex

_HEADER = struct.Struct("<II")


def index_path(path: str | Path) -> Path:
    return Path(str(path) + ".index.jsonl")


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    with os.fdopen(fd, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_embedding_cache(path: str | Path, texts: Sequence[str], matrix: np.ndarray) -> None:
    path = Path(path)
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    if matrix.ndim != 2 or matrix.shape[0] != len(texts):
        raise ValueError("matrix must have one row per text")
    _atomic_write(path, _HEADER.pack(*matrix.shape) + matrix.tobytes())
    lines = [json.dumps({"row": i, "hash": sha256_hex(t), "text": t}, ensure_ascii=False) for i, t in enumerate(texts)]
    _atomic_write(index_path(path), ("\n".join(lines) + "\n" if lines else "").encode("utf-8"))


def read_embedding_cache(path: str | Path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    count, dim = _HEADER.unpack_from(blob)
    body = blob[_HEADER.size:]
    if len(body) != count * dim * 4:
        raise ValueError(f"{path}: expected {count}x{dim} float32 values")
    matrix = np.frombuffer(body, dtype="<f4").reshape(count, dim).copy()
    texts = [""] * count
    with open(index_path(path), encoding="utf-8") as fh:
        for rec in map(json.loads, filter(str.strip, fh)):
            if sha256_hex(rec["text"]) != rec["hash"]:
                raise ValueError(f"{path}: index hash mismatch at row {rec['row']}")
            texts[rec["row"]] = rec["text"]
    return texts, matrix
