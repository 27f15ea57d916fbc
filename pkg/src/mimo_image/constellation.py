"""Square QAM constellations with Gray labeling.

Labels are formed as ``(gray_i << half) | gray_q`` where ``half`` is the
number of bits per axis and ``gray_*`` is the reflected Gray code of the
level position along that axis (position 0 is the most negative level).
Points are scaled to unit average energy. The convex relaxation of the
point set is the bounding square ``[-clip_limit, clip_limit]^2``.

Bytes are packed MSB-first: the first bit of the stream is the most
significant bit of the first byte, and it becomes the most significant
bit of the first symbol label.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InputLengthError, InvalidSymbolError

SUPPORTED_ORDERS = (4, 16, 64, 256)

_DEMAP_TOL = 1e-9


def gray_code(n: np.ndarray | int) -> np.ndarray | int:
    return n ^ (n >> 1)


@dataclass(frozen=True)
class ConstellationSpec:
    """Immutable description of a square QAM alphabet.

    Attributes:
        order: Number of points ``Q``.
        bits_per_symbol: ``log2(Q)``.
        points: Complex array of length ``Q``; ``points[label]`` is the
            point carrying that label.
        scale: Divisor applied to the odd integer levels.
        clip_limit: Largest per-axis coordinate; bounds the relaxation box.
    """

    order: int
    bits_per_symbol: int
    points: np.ndarray = field(repr=False)
    scale: float
    clip_limit: float

    @property
    def levels_per_axis(self) -> int:
        return 1 << (self.bits_per_symbol // 2)

    @property
    def bits_per_axis(self) -> int:
        return self.bits_per_symbol // 2

    @property
    def levels(self) -> np.ndarray:
        """Per-axis amplitudes in increasing order (after scaling)."""
        n = self.levels_per_axis
        return (2.0 * np.arange(n) - (n - 1)) / self.scale

    @property
    def axis_position_to_code(self) -> np.ndarray:
        return gray_code(np.arange(self.levels_per_axis))

    @property
    def axis_code_to_position(self) -> np.ndarray:
        return np.argsort(self.axis_position_to_code)


def build_qam(order: int) -> ConstellationSpec:
    """Build a unit-energy, Gray-labeled square QAM constellation.

    >>> spec = build_qam(4)
    >>> spec.points[0]
    np.complex128(-0.7071067811865475-0.7071067811865475j)
    """
    if order not in SUPPORTED_ORDERS:
        raise ConfigurationError(
            f"unsupported QAM order {order!r}; expected one of {SUPPORTED_ORDERS}"
        )
    bits = int(order).bit_length() - 1
    half = bits // 2
    n = 1 << half
    raw_levels = 2.0 * np.arange(n) - (n - 1)
    # mean |p|^2 over the grid = 2 * mean(level^2) = 2 (Q - 1) / 3
    scale = float(np.sqrt(2.0 * np.mean(raw_levels**2)))

    code_to_pos = np.argsort(gray_code(np.arange(n)))
    labels = np.arange(order)
    i_pos = code_to_pos[labels >> half]
    q_pos = code_to_pos[labels & (n - 1)]
    points = (raw_levels[i_pos] + 1j * raw_levels[q_pos]) / scale
    points.setflags(write=False)
    return ConstellationSpec(
        order=order,
        bits_per_symbol=bits,
        points=points,
        scale=scale,
        clip_limit=float((n - 1) / scale),
    )


def bytes_to_labels(data: bytes | np.ndarray, spec: ConstellationSpec) -> np.ndarray:
    """Regroup an MSB-first bit stream into symbol labels."""
    arr = np.frombuffer(bytes(data), dtype=np.uint8) if not isinstance(data, np.ndarray) else data
    arr = np.asarray(arr, dtype=np.uint8).ravel()
    bps = spec.bits_per_symbol
    if bps == 8:
        return arr.astype(np.int64)
    total = arr.size * 8
    if total % bps:
        raise InputLengthError(
            f"{arr.size} bytes = {total} bits do not fill whole {bps}-bit symbols; "
            f"{total % bps} trailing bits (pad the input upstream)"
        )
    bits = np.unpackbits(arr).reshape(-1, bps).astype(np.int64)
    weights = 1 << np.arange(bps - 1, -1, -1)
    return bits @ weights


def labels_to_bytes(labels: np.ndarray, spec: ConstellationSpec) -> np.ndarray:
    """Inverse of :func:`bytes_to_labels`; returns a ``uint8`` array."""
    labels = np.asarray(labels, dtype=np.int64).ravel()
    bps = spec.bits_per_symbol
    if bps == 8:
        return labels.astype(np.uint8)
    total = labels.size * bps
    if total % 8:
        raise InputLengthError(
            f"{labels.size} symbols carry {total} bits, not a whole number of bytes"
        )
    shifts = np.arange(bps - 1, -1, -1)
    bits = ((labels[:, None] >> shifts) & 1).astype(np.uint8)
    return np.packbits(bits.ravel())


def map_bytes_to_symbols(data: bytes | np.ndarray, spec: ConstellationSpec) -> np.ndarray:
    """Map a byte sequence to constellation points (MSB-first packing)."""
    return spec.points[bytes_to_labels(data, spec)]


def symbols_to_labels(symbols: np.ndarray, spec: ConstellationSpec) -> np.ndarray:
    """Exact inverse lookup; every symbol must already be a constellation point."""
    symbols = np.asarray(symbols, dtype=complex).ravel()
    labels, points = slice_array(symbols, spec)
    off = np.abs(points - symbols) > _DEMAP_TOL
    if np.any(off):
        idx = int(np.flatnonzero(off)[0])
        raise InvalidSymbolError(
            f"symbol {symbols[idx]!r} at index {idx} is not a constellation point; "
            "slice detector output before demapping"
        )
    return labels


def demap_symbols_to_bytes(symbols: np.ndarray, spec: ConstellationSpec) -> bytes:
    return labels_to_bytes(symbols_to_labels(symbols, spec), spec).tobytes()


def _slice_axis(coord: np.ndarray, spec: ConstellationSpec) -> np.ndarray:
    """Nearest level position per axis, ties resolved toward the smaller Gray code."""
    n = spec.levels_per_axis
    t = (coord * spec.scale + (n - 1)) / 2.0
    t = np.clip(t, -1.0, float(n))
    floor = np.floor(t)
    lo = floor.astype(np.int64)
    frac = t - floor
    pos = lo + (frac > 0.5)
    tie = (frac == 0.5) & (lo >= 0) & (lo <= n - 2)
    if np.any(tie):
        codes = spec.axis_position_to_code
        lo_t = lo[tie]
        pick_hi = codes[lo_t + 1] < codes[lo_t]
        pos[tie] = lo_t + pick_hi
    return np.clip(pos, 0, n - 1)


def slice_array(values: np.ndarray, spec: ConstellationSpec) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized hard decision: returns ``(labels, points)`` for each value.

    For a square grid the nearest point separates per axis, so each axis
    is rounded independently. Exact midpoints choose the level whose Gray
    code is smaller; with I bits above Q bits this yields the smallest
    label among equidistant candidates.
    """
    values = np.asarray(values, dtype=complex)
    i_pos = _slice_axis(values.real, spec)
    q_pos = _slice_axis(values.imag, spec)
    codes = spec.axis_position_to_code
    labels = (codes[i_pos] << spec.bits_per_axis) | codes[q_pos]
    return labels, spec.points[labels]


def slice_to_nearest(value: complex, spec: ConstellationSpec) -> tuple[complex, int]:
    """Nearest constellation point and its label for one scalar."""
    labels, points = slice_array(np.asarray([value]), spec)
    return complex(points[0]), int(labels[0])


def project_to_polytope(value, spec: ConstellationSpec):
    """Euclidean projection onto the bounding square; works on scalars and arrays."""
    c = spec.clip_limit
    v = np.asarray(value, dtype=complex)
    out = np.clip(v.real, -c, c) + 1j * np.clip(v.imag, -c, c)
    if out.ndim == 0:
        return complex(out)
    return out


def in_polytope(values, spec: ConstellationSpec, tol: float = 1e-12) -> bool:
    v = np.asarray(values, dtype=complex)
    c = spec.clip_limit + tol
    return bool(np.all(np.abs(v.real) <= c) and np.all(np.abs(v.imag) <= c))
