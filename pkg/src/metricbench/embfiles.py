"""Embedding file formats shared repo-wide.

Two on-disk layouts:

* CSV with header ``label,f0,...,f{d-1}``, one sample per row.
* Binary "EMB1": magic bytes ``EMB1``, little-endian u32 n, u32 d, then
  n little-endian u32 labels, then n*d little-endian f32 values row-major.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .embedcore import EmbeddingSet, LabelSet
from .errors import IoError, ParseError

MAGIC = b"EMB1"


def write_csv(path, embeddings: EmbeddingSet, labels: LabelSet) -> None:
    if embeddings.n != len(labels):
        raise IoError(f"{embeddings.n} embeddings vs {len(labels)} labels")
    d = embeddings.d
    header = "label," + ",".join(f"f{i}" for i in range(d))
    rows = np.column_stack([labels.labels.astype(np.float64), embeddings.data])
    fmt = ["%d"] + ["%.17g"] * d
    np.savetxt(path, rows, delimiter=",", header=header, comments="", fmt=fmt)


def read_csv(path) -> tuple[EmbeddingSet, LabelSet]:
    path = Path(path)
    try:
        with path.open() as fh:
            header = fh.readline().strip()
            cols = header.split(",")
            if not cols or cols[0] != "label" or any(c != f"f{i}" for i, c in enumerate(cols[1:])):
                raise ParseError(f"{path}: bad CSV header {header!r}")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if data.shape[1] != len(cols):
        raise ParseError(f"{path}: {data.shape[1]} columns, header names {len(cols)}")
    labels = LabelSet(np.rint(data[:, 0]).astype(np.int64))
    return EmbeddingSet(data[:, 1:]), labels


def write_emb1(path, embeddings: EmbeddingSet, labels: LabelSet) -> None:
    if embeddings.n != len(labels):
        raise IoError(f"{embeddings.n} embeddings vs {len(labels)} labels")
    n, d = embeddings.n, embeddings.d
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", n, d))
        fh.write(labels.labels.astype("<u4").tobytes())
        fh.write(embeddings.data.astype("<f4").tobytes())


def read_emb1(path) -> tuple[EmbeddingSet, LabelSet]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise ParseError(f"{path}: missing EMB1 magic")
    n, d = struct.unpack_from("<II", raw, 4)
    expect = 12 + 4 * n + 4 * n * d
    if len(raw) != expect:
        raise ParseError(f"{path}: expected {expect} bytes for n={n} d={d}, got {len(raw)}")
    labels = np.frombuffer(raw, dtype="<u4", count=n, offset=12).astype(np.int64)
    values = np.frombuffer(raw, dtype="<f4", count=n * d, offset=12 + 4 * n)
    data = values.astype(np.float64).reshape(n, d)
    return EmbeddingSet(data), LabelSet(labels)


def read_embeddings(path) -> tuple[EmbeddingSet, LabelSet]:
    """Load either format, sniffing the EMB1 magic first."""
    path = Path(path)
    try:
        with path.open("rb") as fh:
            head = fh.read(4)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if head == MAGIC:
        return read_emb1(path)
    return read_csv(path)


def write_embeddings(path, embeddings: EmbeddingSet, labels: LabelSet, fmt: str = "csv") -> None:
    if fmt == "csv":
        write_csv(path, embeddings, labels)
    elif fmt == "emb1":
        write_emb1(path, embeddings, labels)
    else:
        raise ValueError(f"unknown embedding format {fmt!r}")
