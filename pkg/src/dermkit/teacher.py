"""Teacher-embedding file format.

Binary, little-endian: magic ``TEMB``, u32 count, u32 width, then
count*width float32 values row-major. Row order matches a sidecar JSONL of
record ids (one ``{"id": ...}`` object per line).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TEMB"


def sidecar_path(path: str | Path) -> Path:
    return Path(str(path) + ".ids.jsonl")


def write_teacher_file(path: str | Path, ids: list[str], matrix: np.ndarray) -> None:
    matrix = np.asarray(matrix, dtype="<f4")
    if matrix.ndim != 2:
        raise ValueError(f"teacher matrix must be 2-D, got shape {matrix.shape}")
    if len(ids) != matrix.shape[0]:
        raise ValueError(f"{len(ids)} ids for {matrix.shape[0]} embedding rows")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", matrix.shape[0], matrix.shape[1]))
        fh.write(matrix.tobytes(order="C"))
    with open(sidecar_path(path), "w", encoding="utf-8") as fh:
        for rid in ids:
            fh.write(json.dumps({"id": rid}) + "\n")


def read_teacher_file(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Returns (ids, float32 [count, width] matrix)."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    count, width = struct.unpack("<II", raw[4:12])
    expected = 12 + 4 * count * width
    if len(raw) != expected:
        raise ValueError(f"{path}: size {len(raw)} != expected {expected} for {count}x{width}")
    matrix = np.frombuffer(raw[12:], dtype="<f4").reshape(count, width).copy()
    ids = []
    with open(sidecar_path(path), encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                ids.append(json.loads(line)["id"])
    if len(ids) != count:
        raise ValueError(f"{path}: sidecar has {len(ids)} ids for {count} rows")
    return ids, matrix
