"""Binary embedding-file format and the JSON report writer.

Layout ("MDNTEMB1"):

    8 bytes   magic "MDNTEMB1"
    4 x u32   big-endian: n, d, g, flags
    n*d f32   little-endian row-major embeddings
    [labels]  n * i32 little-endian            (flags bit 0)
    [targets] n*g f32 little-endian row-major  (flags bit 1)
    [ids]     n strings, each u16 big-endian length + UTF-8 bytes (bit 2)
"""
from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .metrics import LabeledEmbeddings

MAGIC = b"MDNTEMB1"
FLAG_LABELS = 1
FLAG_TARGETS = 2
FLAG_PATIENTS = 4


def write_embeddings(path, data: LabeledEmbeddings) -> None:
    X = np.asarray(data.X, dtype="<f4")
    n, d = X.shape
    g = 0 if data.targets is None else data.targets.shape[1]
    flags = ((FLAG_LABELS if data.y is not None else 0)
             | (FLAG_TARGETS if data.targets is not None else 0)
             | (FLAG_PATIENTS if data.patient_id is not None else 0))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack(">IIII", n, d, g, flags))
        fh.write(X.tobytes())
        if data.y is not None:
            fh.write(np.asarray(data.y, dtype="<i4").tobytes())
        if data.targets is not None:
            fh.write(np.asarray(data.targets, dtype="<f4").tobytes())
        if data.patient_id is not None:
            for pid in data.patient_id:
                raw = pid.encode("utf-8")
                fh.write(struct.pack(">H", len(raw)))
                fh.write(raw)


def read_embeddings(path) -> LabeledEmbeddings:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:8]!r}")
    n, d, g, flags = struct.unpack(">IIII", raw[8:24])
    off = 24
    X = np.frombuffer(raw, dtype="<f4", count=n * d, offset=off).reshape(n, d).copy()
    off += 4 * n * d
    y = targets = patients = None
    if flags & FLAG_LABELS:
        y = np.frombuffer(raw, dtype="<i4", count=n, offset=off).copy()
        off += 4 * n
    if flags & FLAG_TARGETS:
        targets = np.frombuffer(raw, dtype="<f4", count=n * g, offset=off).reshape(n, g).copy()
        off += 4 * n * g
    if flags & FLAG_PATIENTS:
        patients = []
        for _ in range(n):
            (length,) = struct.unpack(">H", raw[off:off + 2])
            off += 2
            patients.append(raw[off:off + length].decode("utf-8"))
            off += length
    return LabeledEmbeddings(X=X, y=y, targets=targets, patient_id=patients)


def read_embeddings_csv(path) -> LabeledEmbeddings:
    """Small-fixture import: columns label, then feature values."""
    rows = []
    labels = []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec:
                continue
            labels.append(int(rec[0]))
            rows.append([float(v) for v in rec[1:]])
    return LabeledEmbeddings(X=np.asarray(rows, dtype=np.float64),
                             y=np.asarray(labels, dtype=np.int64))


def write_report(path, results: dict) -> None:
    """Per-task report: {task: {metric, mean, std_of_mean, runs}}."""
    with open(path, "w") as fh:
        json.dump(results, fh, indent=2, sort_keys=True)
        fh.write("\n")
