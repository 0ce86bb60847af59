"""uv <-> image transforms, dirty imaging, Högbom CLEAN and image metrics."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DataIOError, ShapeError, UsageError
from .skysim import VisibilitySet


@dataclass
class DenseVisibilityGrid:
    grid: np.ndarray
    centered: bool = True

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.complex128)
        if self.grid.ndim != 2 or self.grid.shape[0] != self.grid.shape[1]:
            raise ShapeError(f"visibility grid must be square, got {self.grid.shape}")

    def hermitian_error(self) -> float:
        g = self.grid
        n = g.shape[0]
        idx = (n - np.arange(n)) % n
        return float(np.abs(g - np.conj(g[np.ix_(idx, idx)])).max())


def ift_image(grid, check_hermitian: bool = True) -> np.ndarray:
    """Centred inverse DFT of a dense grid, returned as a real map.

    Raises if the imaginary residue exceeds ``1e-8 * max|real|``, i.e. the
    grid was not the spectrum of a real image.
    """
    if isinstance(grid, DenseVisibilityGrid):
        grid = grid.grid
    g = np.asarray(grid, dtype=np.complex128)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ShapeError(f"ift_image expects a square grid, got {g.shape}")
    img = np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(g)))
    if check_hermitian:
        scale = np.abs(img.real).max()
        if np.abs(img.imag).max() > 1e-8 * max(scale, 1e-300):
            raise ShapeError("grid is not Hermitian: image has a non-negligible imaginary part")
    return img.real.copy()


def _require_samples(vs: VisibilitySet):
    if len(vs) == 0:
        raise UsageError("visibility set has no samples")


def dirty_image(vs: VisibilitySet, normalized: bool = False) -> np.ndarray:
    """Inverse transform of the zero-filled grid.

    With ``normalized=True`` the map is divided by the raw beam peak
    (measured-cell count / N^2), giving a point source of flux f a peak of f.
    """
    _require_samples(vs)
    img = ift_image(vs.zero_filled())
    if normalized:
        img = img * (vs.grid_size ** 2 / len(vs))
    return img


def dirty_beam(vs: VisibilitySet) -> np.ndarray:
    _require_samples(vs)
    beam = ift_image(vs.mask.astype(np.complex128))
    n = vs.grid_size
    return beam / beam[n // 2, n // 2]


def fit_restoring_beam(beam: np.ndarray) -> np.ndarray:
    """Elliptical Gaussian (peak 1) fitted to the beam's main lobe.

    The lobe is the connected region around the centre above half maximum; a
    least-squares fit of ``log beam`` to a centred quadratic form gives the
    Gaussian's inverse covariance.
    """
    from scipy import ndimage

    n0, n1 = beam.shape
    cy, cx = n0 // 2, n1 // 2
    labels, _ = ndimage.label(beam >= 0.5)
    lobe = labels == labels[cy, cx]
    yy, xx = np.nonzero(lobe)
    dy, dx = yy - cy, xx - cx
    vals = beam[yy, xx]
    keep = (vals > 0) & ((dy != 0) | (dx != 0))
    y, x = np.mgrid[0:n0, 0:n1]
    y, x = y - cy, x - cx
    if keep.sum() < 3:
        # lobe narrower than a pixel: fall back to a half-pixel Gaussian
        return np.exp(-0.5 * (x ** 2 + y ** 2) / 0.25)
    A = np.stack([dx[keep] ** 2, 2 * dx[keep] * dy[keep], dy[keep] ** 2], axis=1) * -0.5
    coef, *_ = np.linalg.lstsq(A, np.log(vals[keep]), rcond=None)
    a, b, c = coef
    if a <= 0 or c <= 0 or a * c - b * b <= 0:
        s2 = max(float(keep.sum()) / np.pi, 0.25)
        a, b, c = 1 / s2, 0.0, 1 / s2
    return np.exp(-0.5 * (a * x ** 2 + 2 * b * x * y + c * y ** 2))


def _fft_convolve_same(img, kernel):
    """Circular convolution with a kernel centred at (n//2, n//2)."""
    K = np.fft.fft2(np.fft.ifftshift(kernel))
    return np.real(np.fft.ifft2(np.fft.fft2(img) * K))


@dataclass
class CleanResult:
    components: list
    model: np.ndarray
    residual: np.ndarray
    restored: np.ndarray
    restoring_beam: np.ndarray
    iterations: int
    peak_history: np.ndarray

    def components_csv(self) -> str:
        lines = ["row,col,flux"]
        lines += [f"{int(r)},{int(c)},{float(f)!r}" for r, c, f in self.components]
        return "\n".join(lines) + "\n"


def hogbom_clean(dirty: np.ndarray, beam: np.ndarray, gain: float = 0.1,
                 max_iter: int = 1000, threshold: float = 0.01) -> CleanResult:
    """Högbom CLEAN of ``dirty`` with a centred, peak-1 ``beam``.

    Stops when the absolute residual peak drops to ``threshold`` times the
    initial peak or after ``max_iter`` components.
    """
    dirty = np.asarray(dirty, dtype=np.float64)
    beam = np.asarray(beam, dtype=np.float64)
    if dirty.shape != beam.shape:
        raise ShapeError(f"dirty {dirty.shape} and beam {beam.shape} differ")
    if not 0 < gain <= 1:
        raise UsageError(f"loop gain must be in (0, 1], got {gain}")
    if not np.any(beam):
        raise UsageError("beam is identically zero")
    residual = dirty.copy()
    stop = float(threshold) * float(np.abs(dirty).max())
    rows, cols, flux, peaks = kernels.hogbom_loop(residual, beam, float(gain), int(max_iter), stop)
    model = np.zeros_like(dirty)
    np.add.at(model, (rows, cols), flux)
    rb = fit_restoring_beam(beam)
    restored = _fft_convolve_same(model, rb) + residual
    comps = [(int(r), int(c), float(f)) for r, c, f in zip(rows, cols, flux)]
    return CleanResult(comps, model, residual, restored, rb, len(comps), peaks)


def clean_brightness(result: CleanResult, vs: VisibilitySet) -> np.ndarray:
    """Per-pixel sky estimate from a CLEAN run on the normalised dirty image.

    ``restored`` is in per-beam units; for scoring against a sky image the
    components are spread with a unit-sum restoring beam and the residual is
    put back on the un-normalised dirty-image scale, so zero iterations give
    exactly :func:`dirty_image`.
    """
    rb = result.restoring_beam
    back = len(vs) / vs.grid_size ** 2
    return _fft_convolve_same(result.model, rb / rb.sum()) + result.residual * back


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"psnr shape mismatch {a.shape} vs {b.shape}")
    if peak <= 0:
        raise UsageError("psnr peak must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse < peak ** 2 * 1e-10:
        return 100.0
    return float(10.0 * np.log10(peak ** 2 / mse))


def _window_sums(x, w):
    """Sums over every w x w window (valid positions) via a 2-D cumulative sum."""
    c = np.zeros((x.shape[0] + 1, x.shape[1] + 1))
    c[1:, 1:] = x.cumsum(0).cumsum(1)
    return c[w:, w:] - c[:-w, w:] - c[w:, :-w] + c[:-w, :-w]


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0, window: int = 8) -> float:
    """Mean SSIM over all 8x8 sliding windows (uniform weights, population moments)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"ssim shape mismatch {a.shape} vs {b.shape}")
    if peak <= 0:
        raise UsageError("ssim peak must be positive")
    if min(a.shape) < window:
        raise ShapeError(f"images smaller than the {window}x{window} window")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    m = window * window
    mu_a = _window_sums(a, window) / m
    mu_b = _window_sums(b, window) / m
    var_a = np.maximum(_window_sums(a * a, window) / m - mu_a ** 2, 0.0)
    var_b = np.maximum(_window_sums(b * b, window) / m - mu_b ** 2, 0.0)
    cov = _window_sums(a * b, window) / m - mu_a * mu_b
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    return float(np.clip(s.mean(), -1.0, 1.0))


def to_png_array(img: np.ndarray) -> np.ndarray:
    """Peak-scaled 8-bit rendering (negative values clip to black)."""
    img = np.asarray(img, dtype=np.float64)
    peak = img.max()
    scaled = img / peak if peak > 0 else np.zeros_like(img)
    return np.clip(np.rint(scaled * 255), 0, 255).astype(np.uint8)


def save_png(path, img: np.ndarray) -> None:
    from PIL import Image

    try:
        Image.fromarray(to_png_array(img)).save(path)
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


def write_components_csv(path, result: CleanResult) -> None:
    try:
        Path(path).write_text(result.components_csv())
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc
