"""Post-detection image filters: Gaussian low-pass and patch sparse coding."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ShapeError
from .image import ImagePlane


# --------------------------------------------------------------------------
# Gaussian low-pass
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianKernel:
    sigma: float
    radius: int
    coefficients: np.ndarray = field(repr=False)
    normalized: bool = True
    paper_exact: bool = False

    @property
    def size(self) -> int:
        return 2 * self.radius + 1


def default_radius(sigma: float) -> int:
    return max(1, math.ceil(3.0 * sigma))


def gaussian_kernel(
    sigma: float, radius: int | None = None, paper_exact: bool = False
) -> GaussianKernel:
    """Unit-sum 2-D Gaussian on the grid ``-radius..radius`` squared.

    The exponent is ``-(x^2 + y^2) / (2 sigma^2)``. With ``paper_exact``
    the factor 2 is dropped, i.e. ``-(x^2 + y^2) / sigma^2``, which is the
    same shape as the standard kernel at ``sigma / sqrt(2)``.
    """
    if not sigma > 0:
        raise ConfigurationError(f"gaussian sigma must be > 0, got {sigma!r}")
    if radius is None:
        radius = default_radius(sigma)
    if int(radius) != radius or radius < 1:
        raise ConfigurationError(f"kernel radius must be an integer >= 1, got {radius!r}")
    radius = int(radius)
    t = np.arange(-radius, radius + 1, dtype=float)
    r2 = t[:, None] ** 2 + t[None, :] ** 2
    denom = sigma**2 if paper_exact else 2.0 * sigma**2
    coeffs = np.exp(-r2 / denom)
    coeffs /= coeffs.sum()
    coeffs.setflags(write=False)
    return GaussianKernel(sigma=float(sigma), radius=radius, coefficients=coeffs, paper_exact=paper_exact)


def convolve_float(pixels: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Replicate-padded 2-D convolution returning floats.

    Terms are accumulated in kernel row-major order, one shifted plane at a
    time, so the result is reproducible by a plain nested loop that sums
    in the same order.
    """
    img = np.asarray(pixels, dtype=float)
    kh, kw = kernel.shape
    ry, rx = kh // 2, kw // 2
    padded = np.pad(img, ((ry, ry), (rx, rx)), mode="edge")
    h, w = img.shape
    out = np.zeros_like(img)
    for i in range(-ry, ry + 1):
        for j in range(-rx, rx + 1):
            # out(y, x) += k(i, j) * in(y - i, x - j)
            out += kernel[i + ry, j + rx] * padded[ry - i : ry - i + h, rx - j : rx - j + w]
    return out


def to_pixels(values: np.ndarray) -> np.ndarray:
    """Round half-to-even and clamp to the 8-bit range."""
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def convolve2d(image: ImagePlane, kernel: GaussianKernel | np.ndarray) -> ImagePlane:
    coeffs = kernel.coefficients if isinstance(kernel, GaussianKernel) else np.asarray(kernel)
    if image.pixels.size == 0:
        raise ShapeError("cannot filter an empty image")
    return ImagePlane(to_pixels(convolve_float(image.pixels, coeffs)))


def gaussian_filter(
    image: ImagePlane, sigma: float = 1.3, radius: int | None = None, paper_exact: bool = False
) -> ImagePlane:
    return convolve2d(image, gaussian_kernel(sigma, radius, paper_exact))


# --------------------------------------------------------------------------
# Patch sparse coding
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PatchDictionary:
    atoms: np.ndarray = field(repr=False)
    patch_size: int

    def __post_init__(self):
        p2 = self.patch_size**2
        if self.atoms.ndim != 2 or self.atoms.shape[0] != p2:
            raise ShapeError(f"dictionary must have {p2} rows, got shape {self.atoms.shape}")
        if self.atoms.shape[1] < p2:
            raise ConfigurationError(
                f"dictionary has {self.atoms.shape[1]} atoms, needs at least {p2}"
            )

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[1]


def build_dct_dictionary(patch_size: int = 8, atoms_per_axis: int = 16) -> PatchDictionary:
    """Separable 2-D DCT dictionary with ``atoms_per_axis**2`` unit-norm atoms.

    The 1-D atoms are ``cos(pi k (i + 1/2) / atoms_per_axis)``; with
    ``atoms_per_axis == patch_size`` this is the orthonormal DCT-II basis.
    Atom ``a = kr * atoms_per_axis + kc`` is the outer product of row
    frequency ``kr`` and column frequency ``kc``, flattened row-major.
    """
    if patch_size < 1:
        raise ConfigurationError(f"patch_size must be >= 1, got {patch_size}")
    if atoms_per_axis < patch_size:
        raise ConfigurationError(
            f"atoms_per_axis ({atoms_per_axis}) must be >= patch_size ({patch_size})"
        )
    i = np.arange(patch_size) + 0.5
    k = np.arange(atoms_per_axis)
    one_d = np.cos(np.pi * np.outer(i, k) / atoms_per_axis)
    one_d /= np.linalg.norm(one_d, axis=0)
    atoms = np.kron(one_d, one_d)
    atoms /= np.linalg.norm(atoms, axis=0)
    atoms.setflags(write=False)
    return PatchDictionary(atoms=atoms, patch_size=patch_size)


@dataclass(frozen=True)
class PatchFilterConfig:
    """Settings for :func:`patch_denoise`.

    ``noise_level`` is a standard deviation on the 0-255 scale. Coding of a
    patch stops once its squared residual drops to
    ``patch_size**2 * (gain * noise_level)**2``.
    """

    patch_size: int = 8
    stride: int = 4
    noise_level: float = 41.0
    max_atoms: int | None = None
    gain: float = 1.15
    dictionary: PatchDictionary | None = None

    def __post_init__(self):
        if self.patch_size < 1:
            raise ConfigurationError(f"patch_size must be >= 1, got {self.patch_size}")
        if not 1 <= self.stride <= self.patch_size:
            raise ConfigurationError(
                f"stride must satisfy 1 <= stride <= patch_size, got {self.stride}"
            )
        if not self.noise_level > 0:
            raise ConfigurationError(f"noise_level must be > 0, got {self.noise_level}")
        if self.max_atoms is not None and self.max_atoms < 1:
            raise ConfigurationError(f"max_atoms must be >= 1, got {self.max_atoms}")
        if self.dictionary is None:
            object.__setattr__(self, "dictionary", build_dct_dictionary(self.patch_size))
        elif self.dictionary.patch_size != self.patch_size:
            raise ConfigurationError(
                f"dictionary is for {self.dictionary.patch_size}px patches, "
                f"config uses {self.patch_size}px"
            )

    @property
    def atom_limit(self) -> int:
        return self.max_atoms if self.max_atoms is not None else self.patch_size**2 // 2

    @property
    def residual_threshold(self) -> float:
        return self.patch_size**2 * (self.gain * self.noise_level) ** 2


@dataclass
class SparseCodes:
    """Coefficients for a batch of patches (one row per patch).

    ``residual_history[n]`` holds squared residual norms after ``n``
    atoms; entries for patches that had already stopped repeat their
    final value.
    """

    coefficients: np.ndarray
    n_atoms: np.ndarray
    residual_history: np.ndarray

    @property
    def residual(self) -> np.ndarray:
        return self.residual_history[-1]


def matching_pursuit(
    patches: np.ndarray,
    dictionary: np.ndarray,
    threshold: float,
    max_atoms: int,
) -> SparseCodes:
    """Orthogonal matching pursuit on the rows of ``patches``.

    Each step adds the atom most correlated with the current residual and
    refits all selected coefficients by least squares. A patch stops when
    its squared residual is at most ``threshold`` or it holds
    ``max_atoms`` atoms.
    """
    x = np.atleast_2d(np.asarray(patches, dtype=float))
    d = np.asarray(dictionary, dtype=float)
    n, p2 = x.shape
    if d.shape[0] != p2:
        raise ShapeError(f"patches have {p2} samples but atoms have {d.shape[0]}")
    n_atoms_dict = d.shape[1]
    max_atoms = min(max_atoms, p2)

    selected = np.zeros((n, max_atoms), dtype=np.int64)
    coeffs_sel = np.zeros((n, max_atoms))
    counts = np.zeros(n, dtype=np.int64)
    residual = x.copy()
    res2 = np.einsum("ij,ij->i", residual, residual)
    history = [res2.copy()]
    # floor keeps exact representations from chasing round-off
    floor = 1e-20 * np.maximum(np.einsum("ij,ij->i", x, x), 1.0)
    active = np.flatnonzero(res2 > np.maximum(threshold, floor))

    for k in range(max_atoms):
        if active.size == 0:
            break
        score = np.abs(residual[active] @ d)
        if k:
            np.put_along_axis(score, selected[active, :k], -1.0, axis=1)
        pick = np.argmax(score, axis=1)
        selected[active, k] = pick
        sub = d[:, selected[active, : k + 1]].transpose(1, 0, 2)  # (a, p2, k+1)
        gram = np.einsum("apk,apl->akl", sub, sub)
        rhs = np.einsum("apk,ap->ak", sub, x[active])
        sol = np.linalg.solve(gram, rhs[..., None])[..., 0]
        approx = np.einsum("apk,ak->ap", sub, sol)
        new_res = x[active] - approx
        new_res2 = np.einsum("ij,ij->i", new_res, new_res)
        prev = res2[active]
        if np.any(new_res2 > prev * (1 + 1e-9) + 1e-9):
            raise ArithmeticError("matching pursuit residual increased")
        residual[active] = new_res
        res2[active] = new_res2
        coeffs_sel[active, : k + 1] = sol
        counts[active] = k + 1
        history.append(res2.copy())
        keep = new_res2 > np.maximum(threshold, floor[active])
        active = active[keep]

    coefficients = np.zeros((n, n_atoms_dict))
    rows = np.repeat(np.arange(n), max_atoms)
    mask = (np.arange(max_atoms)[None, :] < counts[:, None]).ravel()
    np.add.at(coefficients, (rows[mask], selected.ravel()[mask]), coeffs_sel.ravel()[mask])
    return SparseCodes(coefficients=coefficients, n_atoms=counts, residual_history=np.array(history))


def sparse_code_patch(patch: np.ndarray, config: PatchFilterConfig) -> np.ndarray:
    """Sparse coefficient vector (length = number of atoms) for one flattened patch."""
    patch = np.asarray(patch, dtype=float).ravel()
    if patch.size != config.patch_size**2:
        raise ShapeError(f"patch has {patch.size} samples, expected {config.patch_size**2}")
    codes = matching_pursuit(
        patch[None], config.dictionary.atoms, config.residual_threshold, config.atom_limit
    )
    return codes.coefficients[0]


def patch_origins(length: int, patch_size: int, stride: int) -> list[int]:
    """Start offsets along one axis, with a final edge-aligned patch when needed."""
    starts = list(range(0, length - patch_size + 1, stride))
    if starts[-1] != length - patch_size:
        starts.append(length - patch_size)
    return starts


def patch_denoise(image: ImagePlane, config: PatchFilterConfig | None = None) -> ImagePlane:
    """Sparse-code every patch over the dictionary and average the reconstructions."""
    config = config or PatchFilterConfig()
    p = config.patch_size
    pix = image.pixels.astype(float)
    h, w = pix.shape
    if h < p or w < p:
        raise ShapeError(f"image {w}x{h} is smaller than one {p}x{p} patch")
    rows = patch_origins(h, p, config.stride)
    cols = patch_origins(w, p, config.stride)
    windows = np.lib.stride_tricks.sliding_window_view(pix, (p, p))
    patches = windows[np.ix_(rows, cols)].reshape(-1, p * p)

    codes = matching_pursuit(
        patches, config.dictionary.atoms, config.residual_threshold, config.atom_limit
    )
    recon = (codes.coefficients @ config.dictionary.atoms.T).reshape(len(rows), len(cols), p, p)

    acc = np.zeros_like(pix)
    weight = np.zeros_like(pix)
    for a, r in enumerate(rows):
        for b, c in enumerate(cols):
            acc[r : r + p, c : c + p] += recon[a, b]
            weight[r : r + p, c : c + p] += 1.0
    return ImagePlane(to_pixels(acc / weight))
