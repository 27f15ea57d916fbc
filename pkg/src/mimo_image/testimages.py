"""512x512 grayscale test images.

The classic Lenna/Barbara/Mandrill/Peppers set is not redistributable, so
by default each is replaced by a scikit-image sample with a similar
character. Point ``MIMO_IMAGE_TEST_IMAGES`` at a directory holding
``lenna.pgm``, ``barbara.pgm``, ``mandrill.pgm`` and ``peppers.pgm``
(512x512, P5) to use the originals instead.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .image import ImagePlane, load_pgm, save_pgm

ENV_VAR = "MIMO_IMAGE_TEST_IMAGES"

NAMES = ("lenna", "barbara", "mandrill", "peppers")

# portrait, periodic texture, fine fur-like texture, smooth regions with edges
STAND_INS = {
    "lenna": "astronaut",
    "barbara": "brick",
    "mandrill": "grass",
    "peppers": "camera",
}


def _skimage_plane(name: str) -> ImagePlane:
    try:
        from skimage import color, data
    except ImportError as exc:  # pragma: no cover
        raise RuntimeError(
            f"scikit-image is needed for bundled test images; or set {ENV_VAR}"
        ) from exc
    arr = getattr(data, name)()
    if arr.ndim == 3:
        arr = np.rint(color.rgb2gray(arr[..., :3]) * 255.0).astype(np.uint8)
    return ImagePlane(arr.astype(np.uint8))


def load_test_images(directory: str | Path | None = None) -> dict[str, ImagePlane]:
    """Return the four images keyed by their classic names."""
    directory = directory or os.environ.get(ENV_VAR)
    if directory:
        return {n: load_pgm(Path(directory) / f"{n}.pgm") for n in NAMES}
    return {n: _skimage_plane(STAND_INS[n]) for n in NAMES}


def image_source() -> str:
    src = os.environ.get(ENV_VAR)
    if src:
        return f"originals from {src}"
    return "scikit-image stand-ins " + ", ".join(f"{k}->{v}" for k, v in STAND_INS.items())


def export_pgm(out_dir: Path) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, img in load_test_images().items():
        path = out_dir / f"{name}.pgm"
        save_pgm(img, path)
        paths.append(path)
    return paths
