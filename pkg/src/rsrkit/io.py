"""Dataset files.

Binary layout (little endian)::

    b"RSRD"  u32 version  u32 D  u32 N  u32 flags
    float64[D * N]   points, column-major (point after point)
    u8[N]            labels, 1 = inlier       (flags bit 0)
    float64          noise epsilon            (flags bit 1)

The ground-truth basis is not part of the binary format; :func:`save_truth`
writes it to a JSON sidecar next to the dataset.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .data import Dataset, GroundTruth
from .errors import InvalidDataset

MAGIC = b"RSRD"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")
FLAG_LABELS = 1
FLAG_EPSILON = 2


def write_dataset(path, data: Dataset, epsilon=None):
    D, N = data.points.shape
    flags = (FLAG_LABELS if data.labels is not None else 0) | (FLAG_EPSILON if epsilon is not None else 0)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, D, N, flags))
        fh.write(np.asarray(data.points, dtype="<f8").tobytes(order="F"))
        if data.labels is not None:
            fh.write(data.labels.astype(np.uint8).tobytes())
        if epsilon is not None:
            fh.write(struct.pack("<d", float(epsilon)))


def read_dataset(path):
    """Return ``(Dataset, epsilon or None)``."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise InvalidDataset(f"{path}: file too short")
    magic, version, D, N, flags = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise InvalidDataset(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise InvalidDataset(f"{path}: unsupported version {version}")
    need = _HEADER.size + 8 * D * N + (N if flags & FLAG_LABELS else 0) + (8 if flags & FLAG_EPSILON else 0)
    if len(raw) != need:
        raise InvalidDataset(f"{path}: expected {need} bytes, found {len(raw)}")
    off = _HEADER.size
    X = np.frombuffer(raw, dtype="<f8", count=D * N, offset=off).reshape((D, N), order="F").astype(float)
    off += 8 * D * N
    labels = None
    if flags & FLAG_LABELS:
        lab = np.frombuffer(raw, dtype=np.uint8, count=N, offset=off)
        if np.any(lab > 1):
            raise InvalidDataset(f"{path}: labels must be 0 or 1")
        labels = lab.astype(bool)
        off += N
    eps = struct.unpack_from("<d", raw, off)[0] if flags & FLAG_EPSILON else None
    return Dataset(X, labels), eps


def write_csv(path, data: Dataset):
    """One point per row; the label column (1 = inlier) comes last when present."""
    D = data.ambient_dim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        head = [f"x{i}" for i in range(D)]
        if data.labels is not None:
            head.append("label")
        w.writerow(head)
        for j in range(data.count):
            row = ["%.17g" % v for v in data.points[:, j]]
            if data.labels is not None:
                row.append(str(int(data.labels[j])))
            w.writerow(row)


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidDataset(f"{path}: empty file")
    head, body = rows[0], rows[1:]
    has_labels = head[-1] == "label"
    vals = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(head))
    if has_labels:
        return Dataset(vals[:, :-1].T.copy(), vals[:, -1].astype(int) == 1)
    return Dataset(vals.T.copy())


def truth_path(dataset_path):
    p = Path(dataset_path)
    return p.with_name(p.stem + ".truth.json")


def save_truth(path, truth: GroundTruth):
    obj = {
        "basis": truth.basis.tolist(),
        "labels": truth.labels.astype(int).tolist(),
        "noise_epsilon": truth.noise_epsilon,
    }
    Path(path).write_text(json.dumps(obj))


def load_truth(path):
    obj = json.loads(Path(path).read_text())
    return GroundTruth(np.array(obj["basis"], dtype=float), np.array(obj["labels"], dtype=bool),
                       obj.get("noise_epsilon"))
