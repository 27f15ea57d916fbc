import numpy as np
import pytest

from mimo_image.constellation import build_qam

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def qam4():
    return build_qam(4)


@pytest.fixture(scope="session")
def qam16():
    return build_qam(16)


@pytest.fixture(scope="session")
def qam256():
    return build_qam(256)


# --------------------------------------------------------------------------
# Independent oracles, deliberately naive
# --------------------------------------------------------------------------


def brute_force_slice(value: complex, points) -> int:
    """Linear scan; strict '<' keeps the smallest label on ties."""
    best, best_d = 0, None
    for label, p in enumerate(points):
        d = (value.real - p.real) ** 2 + (value.imag - p.imag) ** 2
        if best_d is None or d < best_d:
            best, best_d = label, d
    return best


def grid_projection(values: np.ndarray, clip: float, n: int = 301) -> np.ndarray:
    """Argmin of distance over a dense grid covering the square."""
    axis = np.linspace(-clip, clip, n)
    grid = (axis[:, None] + 1j * axis[None, :]).ravel()
    out = np.empty(len(values), dtype=complex)
    for start in range(0, len(values), 50):
        v = values[start : start + 50]
        d = np.abs(v[:, None] - grid[None, :])
        out[start : start + 50] = grid[np.argmin(d, axis=1)]
    return out


def naive_convolve(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Quadruple loop with clamped (replicate) indexing, round half-even, clamp."""
    h, w = img.shape
    r = kernel.shape[0] // 2
    out = np.zeros((h, w), dtype=np.uint8)
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for i in range(-r, r + 1):
                for j in range(-r, r + 1):
                    yy = min(max(y - i, 0), h - 1)
                    xx = min(max(x - j, 0), w - 1)
                    acc += float(kernel[i + r, j + r]) * float(img[yy, xx])
            out[y, x] = min(max(round(acc), 0), 255)
    return out


@pytest.fixture(scope="session")
def natural_image():
    """64x64 crop of a natural image, used where full frames would be slow."""
    from skimage import data

    return data.camera()[200:264, 220:284].copy()
