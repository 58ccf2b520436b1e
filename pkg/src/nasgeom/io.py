"""File formats: FMAT feature files, CSV features, CIFAR-10 binary batches, configs.

FMAT layout (all little-endian)::

    b"FMAT"  u8 version=1  u32 rows  u32 cols  f64[rows*cols] row-major
    [u8 has_labels  u16[rows] labels if has_labels == 1]

The trailing label block is optional on read; writers always emit the flag.
"""

from __future__ import annotations

import csv
import hashlib
import io
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from nasgeom.netlab import FeatureMatrix, ImageBatch

FMAT_MAGIC = b"FMAT"
FMAT_VERSION = 1
_HEADER = struct.Struct("<4sBII")

CIFAR_RECORD = 1 + 3 * 32 * 32


class FormatError(ValueError):
    pass


def atomic_write(path, data: bytes) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_fmat(values, labels=None) -> bytes:
    values = np.ascontiguousarray(values, dtype="<f8")
    if values.ndim != 2:
        raise ValueError("FMAT holds a 2-D matrix")
    rows, cols = values.shape
    parts = [_HEADER.pack(FMAT_MAGIC, FMAT_VERSION, rows, cols), values.tobytes()]
    if labels is None:
        parts.append(b"\x00")
    else:
        labels = np.asarray(labels)
        if labels.shape != (rows,):
            raise ValueError("labels must have one entry per row")
        if labels.min(initial=0) < 0 or labels.max(initial=0) > 0xFFFF:
            raise ValueError("labels must fit in u16")
        parts += [b"\x01", labels.astype("<u2").tobytes()]
    return b"".join(parts)


def decode_fmat(data: bytes) -> FeatureMatrix:
    if len(data) < _HEADER.size:
        raise FormatError(f"FMAT too short ({len(data)} bytes)")
    magic, version, rows, cols = _HEADER.unpack_from(data)
    if magic != FMAT_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != FMAT_VERSION:
        raise FormatError(f"unsupported FMAT version {version}")
    body = _HEADER.size + 8 * rows * cols
    if len(data) not in (body, body + 1, body + 1 + 2 * rows):
        raise FormatError(f"FMAT length {len(data)} does not match {rows}x{cols} header")
    values = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=_HEADER.size)
    values = values.reshape(rows, cols).astype(np.float64)
    labels = None
    if len(data) > body:
        flag = data[body]
        if flag == 1 and len(data) == body + 1 + 2 * rows:
            labels = np.frombuffer(data, dtype="<u2", count=rows, offset=body + 1).astype(np.int64)
        elif not (flag == 0 and len(data) == body + 1):
            raise FormatError("inconsistent FMAT label block")
    return FeatureMatrix(values, labels)


def write_fmat(path, values, labels=None) -> None:
    atomic_write(path, encode_fmat(values, labels))


def read_fmat(path) -> FeatureMatrix:
    return decode_fmat(Path(path).read_bytes())


def read_csv_features(path) -> FeatureMatrix:
    """CSV with a header row; a trailing ``label`` column becomes the labels."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty CSV") from None
        rows = [r for r in reader if r]
    if not rows:
        raise FormatError(f"{path}: no data rows")
    table = np.asarray(rows, dtype=np.float64)
    if table.shape[1] != len(header):
        raise FormatError(f"{path}: ragged CSV")
    if header[-1].strip().lower() == "label":
        return FeatureMatrix(table[:, :-1], table[:, -1].astype(np.int64))
    return FeatureMatrix(table)


def write_csv_features(path, values, labels=None) -> None:
    values = np.asarray(values, dtype=np.float64)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = [f"f{i}" for i in range(values.shape[1])]
    w.writerow(header + (["label"] if labels is not None else []))
    for i, row in enumerate(values):
        cells = [repr(float(v)) for v in row]
        w.writerow(cells + ([int(labels[i])] if labels is not None else []))
    atomic_write(path, buf.getvalue().encode())


def read_features(path) -> FeatureMatrix:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_csv_features(path)
    return read_fmat(path)


def read_cifar10(path) -> ImageBatch:
    """CIFAR-10 binary batch: records of 1 label byte + 3072 channel-planar pixels."""
    raw = Path(path).read_bytes()
    if not raw or len(raw) % CIFAR_RECORD:
        raise FormatError(
            f"{path}: length {len(raw)} is not a multiple of the {CIFAR_RECORD}-byte record size"
        )
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    images = rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return ImageBatch(images, rec[:, 0].astype(np.int64))


class CifarBatches:
    """Data source drawing seeded random batches from CIFAR-10 binary files."""

    def __init__(self, paths, seed: int = 0):
        from nasgeom import rng

        self.paths = [str(p) for p in paths]
        parts = [read_cifar10(p) for p in self.paths]
        self.images = np.concatenate([p.data for p in parts])
        self.labels = np.concatenate([p.labels for p in parts])
        self.seed = seed
        self._rng = rng

    def __call__(self, index: int, size: int) -> ImageBatch:
        if size > len(self.images):
            raise ValueError(f"batch of {size} requested from {len(self.images)} images")
        g = self._rng.generator(self.seed, "cifar-batch", index)
        idx = np.sort(g.choice(len(self.images), size, replace=False))
        return ImageBatch(self.images[idx], self.labels[idx])

    def describe(self) -> dict:
        return {"kind": "cifar10", "seed": self.seed, "files": {p: file_digest(p) for p in self.paths}}


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def read_config(path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment. Dashes in keys become underscores."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise FormatError(f"{path}:{lineno}: expected key=value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out
