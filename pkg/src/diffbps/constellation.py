"""Bit-labeled constellations: normalization, Gray QAM, nearest symbol, file I/O."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

HEADER = "re\tim\tlabel"


class DegenerateConstellationError(ValueError):
    pass


class UnsupportedOrderError(ValueError):
    pass


class ConstellationFormatError(ValueError):
    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(message if row is None else f"row {row}: {message}")


def normalize(points) -> np.ndarray:
    """Scale ``points`` by one positive factor so that mean |x|^2 = 1."""
    points = np.asarray(points, dtype=np.complex128)
    if points.size == 0:
        raise DegenerateConstellationError("empty constellation")
    power = np.mean(np.abs(points) ** 2)
    if power == 0:
        raise DegenerateConstellationError("all constellation points are zero")
    return points / np.sqrt(power)


def label_bits(labels, m: int) -> np.ndarray:
    """Integer labels -> (..., m) bit array, MSB first."""
    labels = np.asarray(labels, dtype=np.int64)
    shifts = np.arange(m - 1, -1, -1)
    return ((labels[..., None] >> shifts) & 1).astype(np.int8)


def bits_to_index(bits) -> np.ndarray:
    """(..., m) bit array, MSB first -> integer labels."""
    bits = np.asarray(bits, dtype=np.int64)
    m = bits.shape[-1]
    return bits @ (1 << np.arange(m - 1, -1, -1))


@dataclass(frozen=True, eq=False)
class Constellation:
    """M complex points and the integer label of each point.

    ``labels[i]`` is the m-bit pattern (as an integer, MSB first) carried by
    ``points[i]``.
    """

    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        points = np.array(self.points, dtype=np.complex128).reshape(-1)
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        size = points.size
        if size < 2 or size & (size - 1):
            raise UnsupportedOrderError(f"constellation size {size} is not a power of 2 >= 2")
        if labels.size != size:
            raise ValueError(f"{labels.size} labels for {size} points")
        if not np.array_equal(np.sort(labels), np.arange(size)):
            raise ValueError("labels must be a permutation of all m-bit patterns")
        points.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return self.points.size

    @property
    def order_m(self) -> int:
        return self.points.size.bit_length() - 1

    @property
    def bit_labels(self) -> np.ndarray:
        return label_bits(self.labels, self.order_m)

    def normalized(self) -> "Constellation":
        return Constellation(normalize(self.points), self.labels)

    def by_label(self) -> np.ndarray:
        """Points reordered so that entry ``i`` carries label ``i``."""
        out = np.empty_like(self.points)
        out[self.labels] = self.points
        return out

    def mean_power(self) -> float:
        return float(np.mean(np.abs(self.points) ** 2))

    def equals(self, other: "Constellation") -> bool:
        return np.array_equal(self.points, other.points) and np.array_equal(self.labels, other.labels)


def from_label_order(points) -> Constellation:
    """Constellation whose i-th point carries label i."""
    points = np.asarray(points, dtype=np.complex128)
    return Constellation(points, np.arange(points.size))


def _gray(n: np.ndarray) -> np.ndarray:
    return n ^ (n >> 1)


def gray_qam(m: int) -> Constellation:
    """Square 2^m-QAM with per-axis reflected Gray labels, unit mean power.

    The first m/2 label bits select the in-phase level and the last m/2 the
    quadrature level; an all-zero axis pattern maps to the largest positive
    amplitude. Point ``i`` carries label ``i``.
    """
    if m < 2 or m % 2:
        raise UnsupportedOrderError(f"square QAM needs an even order m >= 2, got {m}")
    half = m // 2
    side = 1 << half
    # level_of_code[g] = amplitude whose Gray code is g
    level_of_code = np.empty(side, dtype=np.int64)
    level_of_code[_gray(np.arange(side))] = np.arange(side)
    amplitudes = (side - 1) - 2 * level_of_code
    labels = np.arange(1 << m)
    i_amp = amplitudes[labels >> half]
    q_amp = amplitudes[labels & (side - 1)]
    return from_label_order(normalize(i_amp + 1j * q_amp))


def nearest_symbol(z: complex, c: Constellation) -> int:
    """Index of the closest point; ties go to the lowest index."""
    return int(np.argmin(np.abs(z - c.points) ** 2))


def nearest_indices(z, points) -> np.ndarray:
    """Vectorized :func:`nearest_symbol` for an array of received samples."""
    z = np.asarray(z, dtype=np.complex128)
    pr = np.asarray(points).real
    pi = np.asarray(points).imag
    d = (z.real[..., None] - pr) ** 2 + (z.imag[..., None] - pi) ** 2
    return np.argmin(d, axis=-1)


def serialize(c: Constellation, precision: int | None = None) -> str:
    """Tab-separated ``re im label`` table with a header line.

    With ``precision=None`` floats are written in shortest round-trip form so
    :func:`parse` restores them bit-exactly; an integer fixes the number of
    decimals instead.
    """

    def fmt(x: float) -> str:
        return repr(float(x)) if precision is None else f"{x:.{precision}f}"

    rows = [HEADER]
    for p, label in zip(c.points, c.labels):
        rows.append(f"{fmt(p.real)}\t{fmt(p.imag)}\t{int(label):X}")
    return "\n".join(rows) + "\n"


def parse(text: str) -> Constellation:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip().split("\t") != HEADER.split("\t"):
        raise ConstellationFormatError(f"missing header {HEADER!r}", row=1)
    points, labels = [], []
    for row, line in enumerate(lines[1:], start=2):
        fields = line.strip().split("\t")
        if len(fields) != 3:
            raise ConstellationFormatError(f"expected 3 tab-separated fields, got {len(fields)}", row)
        try:
            points.append(complex(float(fields[0]), float(fields[1])))
            labels.append(int(fields[2], 16))
        except ValueError as exc:
            raise ConstellationFormatError(str(exc), row) from None
    try:
        return Constellation(np.array(points), np.array(labels))
    except ValueError as exc:
        raise ConstellationFormatError(str(exc)) from None


def save(c: Constellation, path, precision: int | None = None) -> None:
    Path(path).write_text(serialize(c, precision), encoding="utf-8")


def load(path) -> Constellation:
    return parse(Path(path).read_text(encoding="utf-8"))
