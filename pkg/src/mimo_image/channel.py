"""Rayleigh block-fading uplink channel with additive complex Gaussian noise.

All randomness comes from generators the caller supplies, or from named
sub-streams of a master seed (see :func:`substream`), so that a given
seed reproduces every draw regardless of how vectors are scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ShapeError

# sigma2 below this is treated as a noiseless link and no noise is drawn
NOISELESS_SIGMA2 = 1e-30

STREAM_CHANNEL = 0
STREAM_NOISE = 1
STREAM_VECTOR_CHANNEL = 2


def substream(seed: int, stream: int, index: int | None = None) -> np.random.Generator:
    """Independent generator keyed by ``(seed, stream[, index])``."""
    key = [int(seed), int(stream)] if index is None else [int(seed), int(stream), int(index)]
    return np.random.default_rng(key)


@dataclass(frozen=True)
class ChannelRealization:
    h: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h)
        if h.ndim != 2 or h.shape[0] < 1 or h.shape[1] < 1:
            raise ShapeError(f"channel matrix must be 2-D and non-empty, got shape {h.shape}")
        if h.shape[0] < h.shape[1]:
            raise ConfigurationError(
                f"uplink needs M >= K antennas, got M={h.shape[0]}, K={h.shape[1]}"
            )

    @property
    def m_antennas(self) -> int:
        return self.h.shape[0]

    @property
    def k_antennas(self) -> int:
        return self.h.shape[1]


@dataclass(frozen=True)
class LinkParams:
    """Transmit power per constellation point and noise variance per complex entry."""

    rho: float
    sigma2: float = 1.0

    def __post_init__(self):
        if self.rho < 0:
            raise ConfigurationError(f"rho must be >= 0, got {self.rho}")
        if not self.sigma2 > 0:
            raise ConfigurationError(f"sigma2 must be > 0, got {self.sigma2}")

    @property
    def snr_db(self) -> float:
        return float(10.0 * np.log10(self.rho / self.sigma2))

    @classmethod
    def from_snr(cls, snr_db: float, sigma2: float = 1.0) -> "LinkParams":
        return cls(rho=snr_to_rho(snr_db, sigma2), sigma2=sigma2)


def snr_to_rho(snr_db: float, sigma2: float) -> float:
    if not sigma2 > 0:
        raise ConfigurationError(f"sigma2 must be > 0, got {sigma2}")
    return float(sigma2 * 10.0 ** (snr_db / 10.0))


def complex_normal(rng: np.random.Generator, shape, variance: float = 1.0) -> np.ndarray:
    """Circularly symmetric complex Gaussian samples with the given per-entry variance."""
    std = np.sqrt(variance / 2.0)
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return std * (re + 1j * im)


def draw_channel(m: int, k: int, rng: np.random.Generator) -> ChannelRealization:
    """i.i.d. CN(0, 1) entries, M rows by K columns."""
    if m < 1 or k < 1:
        raise ConfigurationError(f"antenna counts must be >= 1, got m={m}, k={k}")
    return ChannelRealization(complex_normal(rng, (m, k)))


def transmit(
    h: ChannelRealization,
    s: np.ndarray,
    params: LinkParams,
    rng: np.random.Generator,
) -> np.ndarray:
    """Received vector ``sqrt(rho) H s + n`` for one symbol vector."""
    s = np.asarray(s, dtype=complex)
    if s.shape != (h.k_antennas,):
        raise ShapeError(f"symbol vector has shape {s.shape}, expected ({h.k_antennas},)")
    y = np.sqrt(params.rho) * (h.h @ s)
    if params.sigma2 >= NOISELESS_SIGMA2:
        y = y + complex_normal(rng, h.m_antennas, params.sigma2)
    return y


def transmit_vectors(
    h: ChannelRealization | np.ndarray,
    symbols: np.ndarray,
    params: LinkParams,
    seed: int,
) -> np.ndarray:
    """Transmit ``Z`` symbol vectors (rows of ``symbols``).

    ``h`` is either one realization shared by all vectors (block fading)
    or a ``(Z, M, K)`` stack. Noise for row ``z`` comes from the
    sub-stream ``(seed, STREAM_NOISE, z)``, so any row can be regenerated
    on its own.
    """
    symbols = np.asarray(symbols, dtype=complex)
    if symbols.ndim != 2:
        raise ShapeError(f"expected a (Z, K) symbol array, got shape {symbols.shape}")
    hm = h.h if isinstance(h, ChannelRealization) else np.asarray(h)
    z_count, k = symbols.shape
    if hm.shape[-1] != k:
        raise ShapeError(f"channel has {hm.shape[-1]} columns but vectors have length {k}")
    m = hm.shape[-2]
    if hm.ndim == 2:
        y = np.sqrt(params.rho) * (symbols @ hm.T)
    else:
        if hm.shape[0] != z_count:
            raise ShapeError(f"{hm.shape[0]} channel matrices for {z_count} vectors")
        y = np.sqrt(params.rho) * np.einsum("zmk,zk->zm", hm, symbols)
    if params.sigma2 >= NOISELESS_SIGMA2:
        noise = np.empty((z_count, m), dtype=complex)
        for z in range(z_count):
            noise[z] = complex_normal(substream(seed, STREAM_NOISE, z), m, params.sigma2)
        y = y + noise
    return y


def draw_per_vector_channels(m: int, k: int, count: int, seed: int) -> np.ndarray:
    """Independent ``(count, M, K)`` channel stack, one sub-stream per vector."""
    out = np.empty((count, m, k), dtype=complex)
    for z in range(count):
        out[z] = complex_normal(substream(seed, STREAM_VECTOR_CHANNEL, z), (m, k))
    return out


def write_channel_text(h: ChannelRealization, path: str | Path) -> None:
    """One matrix row per line, entries as ``re+imj`` separated by spaces."""
    lines = [" ".join(f"{float(z.real)!r}{float(z.imag):+.17g}j" for z in row) for row in h.h]
    Path(path).write_text("\n".join(lines) + "\n")


def read_channel_text(path: str | Path) -> ChannelRealization:
    rows = [
        [complex(tok) for tok in line.split()]
        for line in Path(path).read_text().splitlines()
        if line.strip()
    ]
    return ChannelRealization(np.array(rows, dtype=complex))
