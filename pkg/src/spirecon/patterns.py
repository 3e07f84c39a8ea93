"""Hadamard measurement patterns for single-pixel acquisition.

Patterns are rows of the Sylvester Hadamard matrix of order ``n**2``, each
row reshaped (row-major) into an ``n x n`` mask.  The DMD displays binary
masks, so selected rows are stored as ``{0, 1}`` via ``(h + 1) / 2``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import cached_property

import numpy as np

ORDERINGS = ("natural", "sequency")

_MAGIC = b"SPIRECON-PAT\x00\x00\x01\x00"  # 16 bytes, format version 1


def _check_pow2(n: int) -> None:
    if n < 1 or n & (n - 1):
        raise ValueError(f"side length must be a power of two, got {n}")


def hadamard_full(n: int) -> np.ndarray:
    """Sylvester Hadamard matrix of order ``n*n`` (entries +-1, int8)."""
    _check_pow2(n)
    h = np.ones((1, 1), dtype=np.int8)
    while h.shape[0] < n * n:
        h = np.block([[h, h], [h, -h]])
    return h


def sign_changes(matrix: np.ndarray) -> np.ndarray:
    """Number of sign flips along each row."""
    return np.count_nonzero(matrix[:, 1:] != matrix[:, :-1], axis=1)


def sequency_permutation(matrix: np.ndarray) -> np.ndarray:
    return np.argsort(sign_changes(matrix), kind="stable")


def order_sequency(matrix: np.ndarray) -> np.ndarray:
    """Rows sorted ascending by sequency (sign-change count)."""
    return matrix[sequency_permutation(matrix)]


def ordering_indices(n: int, ordering: str = "sequency") -> np.ndarray:
    """Row indices of the full transform in acquisition order."""
    if ordering == "natural":
        return np.arange(n * n)
    if ordering == "sequency":
        return sequency_permutation(hadamard_full(n))
    raise ValueError(f"unknown ordering {ordering!r}; expected one of {ORDERINGS}")


def sr_to_m(n: int, sr: float) -> int:
    if not 0 < sr <= 1:
        raise ValueError(f"sampling rate must lie in (0, 1], got {sr}")
    m = int(round(sr * n * n))
    if m == 0:
        raise ValueError(f"sampling rate {sr} selects no patterns for n={n}")
    return m


@dataclass(frozen=True, eq=False)
class PatternSet:
    n: int
    patterns: np.ndarray  # [m, n*n] uint8 in {0, 1}
    ordering: str
    selected_indices: np.ndarray

    @property
    def m(self) -> int:
        return self.patterns.shape[0]

    @property
    def sr(self) -> float:
        return self.m / (self.n * self.n)

    @cached_property
    def sums(self) -> np.ndarray:
        return self.patterns.sum(axis=1, dtype=np.int64)

    @cached_property
    def matrix(self) -> np.ndarray:
        """Patterns as a float64 ``[m, n*n]`` measurement matrix."""
        return self.patterns.astype(np.float64)

    def pm1(self) -> np.ndarray:
        """The selected rows back in +-1 form."""
        return 2 * self.patterns.astype(np.int8) - 1

    def indices_digest(self) -> str:
        return hashlib.sha256(self.selected_indices.astype("<i8").tobytes()).hexdigest()[:16]

    def __eq__(self, other) -> bool:
        return (isinstance(other, PatternSet) and self.n == other.n
                and self.ordering == other.ordering
                and np.array_equal(self.selected_indices, other.selected_indices)
                and np.array_equal(self.patterns, other.patterns))


def select_patterns(n: int, sr: float, ordering: str = "sequency") -> PatternSet:
    """First ``round(sr * n**2)`` rows of the ordered transform, as {0,1} masks."""
    m = sr_to_m(n, sr)
    return pattern_subset(n, m, ordering)


def pattern_subset(n: int, m: int, ordering: str = "sequency") -> PatternSet:
    if not 1 <= m <= n * n:
        raise ValueError(f"pattern count must be in [1, {n * n}], got {m}")
    h = hadamard_full(n)
    idx = ordering_indices(n, ordering)[:m]
    rows = ((h[idx].astype(np.int16) + 1) // 2).astype(np.uint8)
    return PatternSet(n=n, patterns=rows, ordering=ordering, selected_indices=idx.copy())


# ------------------------------------------------------------------ file I/O

def save_patterns(path, ps: PatternSet) -> None:
    """Magic, one ``key=value`` header line, then bit-packed rows."""
    header = (f"n={ps.n} m={ps.m} ordering={ps.ordering} "
              f"indices={ps.indices_digest()}\n").encode()
    bits = np.packbits(ps.patterns, axis=1, bitorder="little")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(header)
        f.write(bits.tobytes())


def load_patterns(path) -> PatternSet:
    with open(path, "rb") as f:
        data = f.read()
    if data[:16] != _MAGIC:
        raise ValueError(f"{path}: not a pattern file (bad magic)")
    nl = data.find(b"\n", 16)
    if nl < 0:
        raise ValueError(f"{path}: missing header line")
    try:
        fields = dict(kv.split("=", 1) for kv in data[16:nl].decode().split())
        n, m, ordering = int(fields["n"]), int(fields["m"]), fields["ordering"]
        digest = fields["indices"]
    except (KeyError, ValueError) as exc:
        raise ValueError(f"{path}: malformed header") from exc
    row_bytes = (n * n + 7) // 8
    payload = data[nl + 1 :]
    if len(payload) != m * row_bytes:
        raise ValueError(f"{path}: expected {m * row_bytes} payload bytes, got {len(payload)}")
    packed = np.frombuffer(payload, dtype=np.uint8).reshape(m, row_bytes)
    rows = np.unpackbits(packed, axis=1, count=n * n, bitorder="little")
    idx = ordering_indices(n, ordering)[:m]
    ps = PatternSet(n=n, patterns=rows, ordering=ordering, selected_indices=idx.copy())
    if ps.indices_digest() != digest:
        raise ValueError(f"{path}: index digest mismatch")
    if not np.array_equal(rows, pattern_subset(n, m, ordering).patterns):
        raise ValueError(f"{path}: pattern rows do not match the {ordering} transform")
    return ps
