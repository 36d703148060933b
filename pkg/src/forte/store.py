"""Embedding containers, file I/O and deterministic splitting.

Embeddings are plain 2-D ``float64`` numpy arrays (rows are points). The
binary interchange format stores them as little-endian binary32::

    offset  size  field
    0       4     magic b"FRTE"
    4       4     version (uint32 LE, currently 1)
    8       8     n rows (uint64 LE)
    16      4     d columns (uint32 LE)
    20      4*n*d row-major float32 LE payload

Random streams come from numpy's PCG64 bit generator seeded through
``SeedSequence``, which is stable across platforms and numpy releases.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"FRTE"
VERSION = 1
_HEADER = struct.Struct("<4sIQI")


class EmbeddingFormatError(ValueError):
    """Raised when an embedding file cannot be decoded."""

    def __init__(self, message, path=None):
        self.path = None if path is None else str(path)
        if self.path:
            message = f"{self.path}: {message}"
        super().__init__(message)


class RaggedRowError(EmbeddingFormatError):
    def __init__(self, row, expected, got, path=None):
        self.row = row
        super().__init__(f"row {row} has {got} columns, expected {expected}", path)


class BadCellError(EmbeddingFormatError):
    def __init__(self, row, column, token, path=None):
        self.row = row
        self.column = column
        super().__init__(f"row {row}, column {column}: {token!r} is not a finite number", path)


class BadMagicError(EmbeddingFormatError):
    pass


class VersionMismatchError(EmbeddingFormatError):
    pass


class TruncatedError(EmbeddingFormatError):
    pass


def rng(seed) -> np.random.Generator:
    """Return the package's seeded generator (PCG64 via SeedSequence)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def substream(seed, *keys) -> np.random.Generator:
    """Independent generator for a (seed, key...) cell; schedule independent."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(k) for k in keys)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def as_matrix(x, name="embeddings") -> np.ndarray:
    """Validate ``x`` as an n x d finite matrix and return it as float64."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must have at least one row and one column, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _parse_cell(token):
    try:
        value = float(token)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def load_csv(path) -> np.ndarray:
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except (OSError, UnicodeDecodeError) as exc:
        raise EmbeddingFormatError(f"cannot read file ({exc})", path) from exc
    if not rows:
        raise EmbeddingFormatError("no data rows", path)

    start = 0
    first = [c.strip() for c in rows[0]]
    if all(_parse_cell(c) is None for c in first):
        start = 1
    if start >= len(rows):
        raise EmbeddingFormatError("no data rows after header", path)

    width = len(rows[start])
    out = np.empty((len(rows) - start, width), dtype=np.float64)
    for i, row in enumerate(rows[start:]):
        lineno = i + start + 1
        if len(row) != width:
            raise RaggedRowError(lineno, width, len(row), path)
        for j, token in enumerate(row):
            value = _parse_cell(token.strip())
            if value is None:
                raise BadCellError(lineno, j + 1, token, path)
            out[i, j] = value
    return out


def format_float32(value) -> str:
    """Shortest decimal string that round-trips the binary32 value."""
    return np.format_float_positional(np.float32(value), unique=True, trim="-")


def save_csv(x, path, header=None, float32=False):
    x = as_matrix(x)
    fmt = format_float32 if float32 else repr
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if header is not None:
            if len(header) != x.shape[1]:
                raise ValueError("header length does not match column count")
            writer.writerow(header)
        for row in x:
            writer.writerow([fmt(float(v)) for v in row])


def save_binary(x, path):
    x = as_matrix(x)
    n, d = x.shape
    with np.errstate(over="ignore"):
        payload = np.ascontiguousarray(x, dtype="<f4")
    if not np.all(np.isfinite(payload)):
        raise ValueError("values overflow binary32")
    with Path(path).open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, d))
        fh.write(payload.tobytes())


def load_binary(path) -> np.ndarray:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise EmbeddingFormatError(f"cannot read file ({exc})", path) from exc
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagicError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}", path)
    if len(blob) < _HEADER.size:
        raise TruncatedError("header is truncated", path)
    _, version, n, d = _HEADER.unpack_from(blob)
    if version != VERSION:
        raise VersionMismatchError(f"unsupported version {version}", path)
    if n < 1 or d < 1:
        raise EmbeddingFormatError(f"invalid shape n={n}, d={d}", path)
    need = 4 * n * d
    have = len(blob) - _HEADER.size
    if have < need:
        raise TruncatedError(f"payload has {have} bytes, header declares {need}", path)
    if have > need:
        raise EmbeddingFormatError(f"{have - need} trailing bytes after payload", path)
    data = np.frombuffer(blob, dtype="<f4", count=n * d, offset=_HEADER.size)
    if not np.all(np.isfinite(data)):
        raise EmbeddingFormatError("payload contains non-finite values", path)
    return data.astype(np.float64).reshape(n, d)


def load_embeddings(path) -> np.ndarray:
    """Load by extension: ``.csv``/``.txt`` as CSV, anything else as binary."""
    if Path(path).suffix.lower() in (".csv", ".txt"):
        return load_csv(path)
    return load_binary(path)


def save_embeddings(x, path, header=None):
    if Path(path).suffix.lower() in (".csv", ".txt"):
        save_csv(x, path, header=header)
    else:
        save_binary(x, path)


@dataclass(frozen=True)
class SplitTriple:
    held_out: np.ndarray
    reference: np.ndarray
    test_like: np.ndarray
    seed: int
    index: tuple  # row indices of each part into the input


def split_indices(n, seed):
    """Shuffled row indices cut into (held_out, reference, test_like).

    Remainder rows go to held_out first, then reference.
    """
    if n < 3:
        raise ValueError(f"three-way split needs at least 3 rows, got {n}")
    perm = rng(seed).permutation(n)
    base, extra = divmod(n, 3)
    sizes = [base + (1 if i < extra else 0) for i in range(3)]
    cuts = np.cumsum(sizes)[:-1]
    return tuple(np.split(perm, cuts))


def three_way_split(x, seed) -> SplitTriple:
    x = as_matrix(x)
    idx = split_indices(x.shape[0], seed)
    return SplitTriple(x[idx[0]], x[idx[1]], x[idx[2]], int(seed), idx)
