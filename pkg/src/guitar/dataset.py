"""Vector datasets and ground-truth files.

Binary vector file layout (little-endian)::

    uint32 count, uint32 dim, then count*dim float32 values, row-major

Ground-truth files share the header (count = number of queries, dim = k) and
then store, per query, k pairs of (uint32 base index, float32 score).
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

_HEADER = struct.Struct("<II")
_GT_PAIR = np.dtype([("index", "<u4"), ("score", "<f4")])

FORMATS = ("raw-f32", "text-csv")


class DatasetError(ValueError):
    """Malformed or inconsistent vector data."""


def _check_finite(values: np.ndarray, where: str) -> None:
    if values.size and not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values))[0]
        raise DatasetError(f"non-finite value in {where} at {tuple(int(i) for i in bad)}")


@dataclass(frozen=True, eq=False)
class VectorDataset:
    """An immutable (count, dim) block of float32 vectors.

    Vector identity is its row index.
    """

    vectors: np.ndarray
    dim: int = field(default=0)

    def __post_init__(self):
        arr = np.asarray(self.vectors)
        if arr.ndim == 1 and arr.size == 0:
            arr = arr.reshape(0, self.dim)
        if arr.ndim != 2:
            raise DatasetError(f"expected a 2-d array, got shape {arr.shape}")
        if self.dim and arr.shape[1] != self.dim:
            raise DatasetError(f"dataset declares dim {self.dim}, rows have {arr.shape[1]}")
        if arr.shape[1] < 1:
            raise DatasetError("dim must be positive")
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        _check_finite(arr, "dataset")
        if arr is self.vectors:
            arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "vectors", arr)
        object.__setattr__(self, "dim", int(arr.shape[1]))

    @property
    def count(self) -> int:
        return int(self.vectors.shape[0])

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, i: int) -> np.ndarray:
        return self.vectors[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, VectorDataset):
            return NotImplemented
        return self.dim == other.dim and np.array_equal(self.vectors, other.vectors)

    __hash__ = None

    @cached_property
    def f64(self) -> np.ndarray:
        """Read-only float64 copy used by the scoring kernels (exact widening)."""
        arr = self.vectors.astype(np.float64)
        arr.setflags(write=False)
        return arr

    @cached_property
    def fingerprint(self) -> bytes:
        """8-byte digest of shape and contents."""
        h = hashlib.sha256(_HEADER.pack(self.count, self.dim))
        h.update(self.vectors.astype("<f4", copy=False).tobytes())
        return h.digest()[:8]


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Exact top-k answers: ``indices[i]`` and ``scores[i]`` for query i, best first."""

    indices: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        sc = np.asarray(self.scores, dtype=np.float64)
        if idx.ndim != 2 or idx.shape != sc.shape:
            raise DatasetError(f"indices {idx.shape} and scores {sc.shape} must be equal 2-d shapes")
        for row, (ri, rs) in enumerate(zip(idx, sc)):
            if len(set(ri.tolist())) != len(ri):
                raise DatasetError(f"duplicate base index in ground-truth row {row}")
            if np.any(np.diff(rs) > 0):
                raise DatasetError(f"ground-truth row {row} not sorted by score descending")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "scores", sc)

    @property
    def k(self) -> int:
        return int(self.indices.shape[1])

    def __len__(self) -> int:
        return int(self.indices.shape[0])

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        return self.indices[i], self.scores[i]


def _read_header(buf: bytes, path) -> tuple[int, int]:
    if len(buf) < _HEADER.size:
        raise DatasetError(f"{path}: truncated header")
    return _HEADER.unpack_from(buf)


def load_dataset(path: str | os.PathLike, format: str = "raw-f32") -> VectorDataset:
    """Load vectors from ``path`` in ``raw-f32`` or ``text-csv`` format."""
    if format == "raw-f32":
        with open(path, "rb") as fh:
            buf = fh.read()
        n, d = _read_header(buf, path)
        if d == 0:
            raise DatasetError(f"{path}: dim must be positive")
        payload = len(buf) - _HEADER.size
        if payload != 4 * n * d:
            raise DatasetError(
                f"{path}: file declares {n}x{d} floats ({4 * n * d} bytes), payload has {payload} bytes"
            )
        arr = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(n, d)
        _check_finite(arr, str(path))
        return VectorDataset(arr.astype(np.float32), d)
    if format in ("text-csv", "csv"):
        return _load_csv(path)
    raise ValueError(f"unknown format {format!r}, expected one of {FORMATS}")


def _load_csv(path) -> VectorDataset:
    # First line: "count,dim"; then one comma-separated row per vector.
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise DatasetError(f"{path}: empty file")
    try:
        n, d = (int(v) for v in lines[0].split(","))
    except ValueError:
        raise DatasetError(f"{path}: bad header {lines[0]!r}, expected 'count,dim'") from None
    rows = lines[1:]
    if len(rows) != n:
        raise DatasetError(f"{path}: file declares {n} rows, found {len(rows)}")
    arr = np.empty((n, d), dtype=np.float32)
    for i, ln in enumerate(rows):
        vals = ln.split(",")
        if len(vals) != d:
            raise DatasetError(f"{path}: file declares {d}, row {i} has {len(vals)}")
        arr[i] = [float(v) for v in vals]
    _check_finite(arr, str(path))
    return VectorDataset(arr, d)


def save_dataset(dataset: VectorDataset, path: str | os.PathLike, format: str = "raw-f32") -> None:
    if format == "raw-f32":
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(dataset.count, dataset.dim))
            fh.write(dataset.vectors.astype("<f4", copy=False).tobytes())
    elif format in ("text-csv", "csv"):
        with open(path, "w") as fh:
            fh.write(f"{dataset.count},{dataset.dim}\n")
            for row in dataset.vectors:
                # repr of a float32 widened to float64 round-trips through float32 exactly
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    else:
        raise ValueError(f"unknown format {format!r}, expected one of {FORMATS}")


def generate_synthetic(n: int, dim: int, seed: int, distribution: str = "gaussian") -> VectorDataset:
    """Deterministic synthetic vectors: ``uniform`` on [-1, 1] or standard ``gaussian``."""
    if n < 0:
        raise ValueError("n must be non-negative")
    if dim < 1:
        raise ValueError("dim must be positive")
    rng = np.random.default_rng(seed)
    if distribution in ("gaussian", "gaussian(0,1)"):
        arr = rng.standard_normal((n, dim))
    elif distribution in ("uniform", "uniform[-1,1]"):
        arr = rng.uniform(-1.0, 1.0, size=(n, dim))
    else:
        raise ValueError(f"unknown distribution {distribution!r}")
    return VectorDataset(arr.astype(np.float32), dim)


def save_groundtruth(truth: GroundTruth, path: str | os.PathLike) -> None:
    pairs = np.empty(truth.indices.shape, dtype=_GT_PAIR)
    pairs["index"] = truth.indices
    pairs["score"] = truth.scores
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(len(truth), truth.indices.shape[1]))
        fh.write(pairs.tobytes())


def load_groundtruth(path: str | os.PathLike) -> GroundTruth:
    with open(path, "rb") as fh:
        buf = fh.read()
    nq, k = _read_header(buf, path)
    payload = len(buf) - _HEADER.size
    if payload != _GT_PAIR.itemsize * nq * k:
        raise DatasetError(f"{path}: file declares {nq} queries x {k} pairs, payload has {payload} bytes")
    pairs = np.frombuffer(buf, dtype=_GT_PAIR, offset=_HEADER.size).reshape(nq, k)
    scores = pairs["score"].astype(np.float64)
    _check_finite(scores, str(path))
    return GroundTruth(pairs["index"].astype(np.int64), scores)
