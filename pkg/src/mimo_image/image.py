"""8-bit grayscale images: PGM I/O, vectorization, and quality metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, PgmFormatError, ShapeError

# Reported in place of +inf when two images are identical. Any image with
# fewer than 1e15 pixels and at least one differing sample scores below it.
MAX_PSNR_DB = 200.0


@dataclass(frozen=True)
class ImagePlane:
    """Row-major grid of 8-bit samples, stored as a ``(height, width)`` array."""

    pixels: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.pixels)
        if arr.ndim != 2:
            raise ShapeError(f"image must be 2-D, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise ConfigurationError("image samples must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def samples(self) -> bytes:
        return self.pixels.tobytes()

    def __repr__(self) -> str:
        return f"ImagePlane({self.width}x{self.height})"

    def __eq__(self, other) -> bool:
        return isinstance(other, ImagePlane) and np.array_equal(self.pixels, other.pixels)

    __hash__ = None


# --------------------------------------------------------------------------
# PGM
# --------------------------------------------------------------------------


def _skip_space(buf: bytes, pos: int) -> int:
    while pos < len(buf) and buf[pos : pos + 1].isspace():
        pos += 1
    return pos


def _read_int(buf: bytes, pos: int, what: str) -> tuple[int, int]:
    pos = _skip_space(buf, pos)
    start = pos
    while pos < len(buf) and buf[pos : pos + 1].isdigit():
        pos += 1
    if pos == start:
        raise PgmFormatError(f"expected {what}", start)
    return int(buf[start:pos]), pos


def parse_pgm(buf: bytes) -> ImagePlane:
    """Decode a binary (P5) PGM with maxval 255.

    One ``#`` comment line is accepted directly after the magic number.
    """
    if buf[:2] != b"P5":
        found = buf[:2].decode("latin-1", "replace")
        raise PgmFormatError(f"unsupported magic {found!r}; only binary P5 is supported", 0)
    pos = 2
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise PgmFormatError("missing whitespace after magic number", pos)
    pos = _skip_space(buf, pos)
    if buf[pos : pos + 1] == b"#":
        end = buf.find(b"\n", pos)
        if end < 0:
            raise PgmFormatError("unterminated comment", pos)
        pos = end + 1
    width, pos = _read_int(buf, pos, "width")
    height, pos = _read_int(buf, pos, "height")
    maxval_at = _skip_space(buf, pos)
    maxval, pos = _read_int(buf, pos, "maxval")
    if maxval != 255:
        raise PgmFormatError(f"maxval {maxval} unsupported; expected 255", maxval_at)
    if width < 1 or height < 1:
        raise PgmFormatError(f"invalid dimensions {width}x{height}", maxval_at)
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise PgmFormatError("missing whitespace before raster", pos)
    pos += 1
    need = width * height
    payload = buf[pos : pos + need]
    if len(payload) < need:
        raise PgmFormatError(
            f"truncated raster: expected {need} bytes, found {len(payload)}", pos + len(payload)
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return ImagePlane(pixels.copy())


def load_pgm(path: str | Path) -> ImagePlane:
    return parse_pgm(Path(path).read_bytes())


def encode_pgm(image: ImagePlane) -> bytes:
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    return header + image.samples


def save_pgm(image: ImagePlane, path: str | Path) -> None:
    Path(path).write_bytes(encode_pgm(image))


# --------------------------------------------------------------------------
# Vectorization
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class VectorizedImage:
    """Row-major pixel stream cut into ``Z`` vectors of length ``K``."""

    vectors: np.ndarray = field(repr=False)
    pad_count: int
    source_dims: tuple[int, int]

    def __post_init__(self):
        v = np.asarray(self.vectors)
        if v.ndim != 2:
            raise ShapeError(f"vectors must form a (Z, K) array, got shape {v.shape}")
        w, h = self.source_dims
        z, k = v.shape
        if not 0 <= self.pad_count < max(k, 1) or z * k != w * h + self.pad_count:
            raise ShapeError(
                f"inconsistent metadata: Z={z}, K={k}, pad={self.pad_count}, dims={w}x{h}"
            )

    @property
    def z(self) -> int:
        return self.vectors.shape[0]

    @property
    def k(self) -> int:
        return self.vectors.shape[1]


def vectorize(image: ImagePlane, k: int) -> VectorizedImage:
    if k < 1:
        raise ConfigurationError(f"vector length must be >= 1, got {k}")
    flat = image.pixels.ravel()
    pad = (-flat.size) % k
    stream = np.concatenate([flat, np.zeros(pad, dtype=np.uint8)])
    return VectorizedImage(stream.reshape(-1, k), pad, (image.width, image.height))


def restore(vectors: VectorizedImage) -> ImagePlane:
    w, h = vectors.source_dims
    stream = np.asarray(vectors.vectors, dtype=np.uint8).ravel()
    if stream.size != w * h + vectors.pad_count:
        raise ShapeError(f"{stream.size} samples cannot restore a {w}x{h} image")
    return ImagePlane(stream[: w * h].reshape(h, w))


# --------------------------------------------------------------------------
# Metrics
# --------------------------------------------------------------------------


@dataclass
class QualityReport:
    """PSNR/MSE of a test image, with optional symbol and byte error rates.

    ``lossless`` is set when the images are identical; ``psnr_db`` is then
    :data:`MAX_PSNR_DB` rather than infinity.
    """

    psnr_db: float
    mse: float
    lossless: bool = False
    symbol_error_rate: float | None = None
    byte_error_rate: float | None = None

    def to_dict(self) -> dict:
        return {
            "psnr_db": self.psnr_db,
            "mse": self.mse,
            "lossless": self.lossless,
            "symbol_error_rate": self.symbol_error_rate,
            "byte_error_rate": self.byte_error_rate,
        }


def _pixels(img) -> np.ndarray:
    return img.pixels if isinstance(img, ImagePlane) else np.asarray(img)


def psnr(reference: ImagePlane, test: ImagePlane) -> QualityReport:
    a, b = _pixels(reference), _pixels(test)
    if a.shape != b.shape:
        raise ShapeError(f"image dimensions differ: {a.shape} vs {b.shape}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return QualityReport(psnr_db=MAX_PSNR_DB, mse=0.0, lossless=True)
    return QualityReport(psnr_db=10.0 * math.log10(255.0**2 / mse), mse=mse)


def symbol_error_rate(tx_labels, rx_labels) -> float:
    tx = np.asarray(tx_labels).ravel()
    rx = np.asarray(rx_labels).ravel()
    if tx.shape != rx.shape:
        raise ShapeError(f"label sequences differ in length: {tx.size} vs {rx.size}")
    if tx.size == 0:
        return 0.0
    return float(np.mean(tx != rx))


def byte_error_rate(reference: ImagePlane, test: ImagePlane) -> float:
    return symbol_error_rate(_pixels(reference), _pixels(test))
