"""Synthetic skies, EHT-like uv coverage and sparse visibility sampling."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataIOError, ShapeError, UsageError
from .numerics import tensorio

SKY_KINDS = ("points", "blobs", "spiral", "ring", "edge_disk")

# Approximate geocentric positions (m) of eight mm-VLBI sites.
EHT_STATIONS = {
    "ALMA": (2225061.2, -5440057.4, -2481681.2),
    "APEX": (2225039.5, -5441197.6, -2479303.4),
    "LMT": (-768715.6, -5988507.1, 2063354.9),
    "PV": (5088967.8, -301681.2, 3825012.2),
    "SMT": (-1828796.2, -5054406.8, 3427865.2),
    "JCMT": (-5464584.7, -2493001.2, 2150653.9),
    "SPT": (809.8, -816.9, -6359568.7),
    "GLT": (541547.0, -1387978.6, 6180982.0),
}


@dataclass
class SkyImage:
    pixels: np.ndarray
    fov: float = 4.848e-10
    label: str = ""
    meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        n = self.pixels.shape[0]
        if self.pixels.ndim != 2 or self.pixels.shape[1] != n:
            raise ShapeError(f"sky must be square, got {self.pixels.shape}")
        if n & (n - 1):
            raise ShapeError(f"sky size {n} is not a power of two")
        if np.any(self.pixels < 0):
            raise UsageError("sky pixels must be non-negative")

    @property
    def n(self) -> int:
        return self.pixels.shape[0]


@dataclass
class ArrayConfig:
    stations: np.ndarray
    declination: float
    hour_angles: np.ndarray
    wavelength: float = 1.3e-3

    def __post_init__(self):
        self.stations = np.asarray(self.stations, dtype=np.float64).reshape(-1, 3)
        self.hour_angles = np.atleast_1d(np.asarray(self.hour_angles, dtype=np.float64))
        if len(self.stations) < 2:
            raise UsageError("an array needs at least two stations")
        if self.hour_angles.size == 0 or np.any(np.diff(self.hour_angles) <= 0):
            raise UsageError("hour angles must be non-empty and strictly increasing")


def eht_like(n_hour_angles: int = 24, span_hours: float = 12.0,
             declination_deg: float = 12.39, wavelength: float = 1.3e-3) -> ArrayConfig:
    """Eight-station array observing over ``span_hours`` centred on transit."""
    half = np.deg2rad(span_hours * 15.0) / 2
    ha = np.linspace(-half, half, n_hour_angles) if n_hour_angles > 1 else np.zeros(1)
    return ArrayConfig(np.array(list(EHT_STATIONS.values())), np.deg2rad(declination_deg), ha,
                       wavelength)


@dataclass
class UVSample:
    u: float
    v: float
    value: complex
    sigma: float


@dataclass
class Coverage:
    """Gridded uv points (both Hermitian halves), sorted in raster order."""
    n: int
    u: np.ndarray
    v: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    partner: np.ndarray
    mask: np.ndarray

    @property
    def fraction(self) -> float:
        return float(self.mask.sum()) / self.n ** 2


def conj_index(i, n):
    """Index of the conjugate frequency on a centred-DC axis of length n."""
    return (n - np.asarray(i)) % n


def _grid_points(u, v, n) -> Coverage:
    """Snap (u, v) grid-unit points to cells, add conjugates, dedupe per cell."""
    c = n // 2
    cols = np.rint(u).astype(np.int64) + c
    rows = np.rint(v).astype(np.int64) + c
    if np.any((rows < 0) | (rows >= n) | (cols < 0) | (cols >= n)):
        raise ShapeError("uv point falls outside the grid")
    flat = rows * n + cols
    cflat = conj_index(rows, n) * n + conj_index(cols, n)
    canon = np.minimum(flat, cflat)
    _, first = np.unique(canon, return_index=True)
    first = np.sort(first)
    pu, pv, pr, pc = u[first], v[first], rows[first], cols[first]
    selfc = flat[first] == cflat[first]
    au = np.concatenate([pu, -pu[~selfc]])
    av = np.concatenate([pv, -pv[~selfc]])
    ar = np.concatenate([pr, conj_index(pr[~selfc], n)])
    ac = np.concatenate([pc, conj_index(pc[~selfc], n)])
    order = np.argsort(ar * n + ac, kind="stable")
    au, av, ar, ac = au[order], av[order], ar[order], ac[order]
    return _coverage_from_cells(n, au, av, ar, ac)


def _coverage_from_cells(n, u, v, rows, cols, require_hermitian=True) -> Coverage:
    if np.any((rows < 0) | (rows >= n) | (cols < 0) | (cols >= n)):
        raise ShapeError("uv sample falls outside the grid")
    mask = np.zeros((n, n), dtype=bool)
    mask[rows, cols] = True
    if mask.sum() != len(rows):
        raise UsageError("duplicate uv cells in sample list")
    lookup = np.full((n, n), -1, dtype=np.int64)
    lookup[rows, cols] = np.arange(len(rows))
    partner = lookup[conj_index(rows, n), conj_index(cols, n)]
    if require_hermitian and np.any(partner < 0):
        raise UsageError("sample list is not Hermitian-complete")
    return Coverage(n, u, v, rows, cols, partner, mask)


def compute_uv_coverage(cfg: ArrayConfig, n: int, uv_fill: float = 0.9) -> Coverage:
    """Project every baseline at every hour angle and grid onto an n x n plane.

    The longest projected baseline lands at ``uv_fill * (n/2 - 1)`` cells from
    the centre.
    """
    st = cfg.stations
    i, j = np.triu_indices(len(st), k=1)
    B = st[j] - st[i]
    H = cfg.hour_angles[:, None]
    sd, cd = np.sin(cfg.declination), np.cos(cfg.declination)
    bx, by, bz = B[:, 0][None], B[:, 1][None], B[:, 2][None]
    u = (bx * np.sin(H) + by * np.cos(H)) / cfg.wavelength
    v = (-bx * np.cos(H) * sd + by * np.sin(H) * sd + bz * cd) / cfg.wavelength
    u, v = u.ravel(), v.ravel()
    extent = max(np.abs(u).max(), np.abs(v).max())
    s = uv_fill * (n / 2 - 1) / extent if extent > 0 else 0.0
    return _grid_points(u * s, v * s, n)


def full_coverage(n: int) -> Coverage:
    """Every cell of the n x n grid."""
    c = n // 2
    v, u = np.divmod(np.arange(n * n), n)
    return _coverage_from_cells(n, (u - c).astype(np.float64), (v - c).astype(np.float64), v, u)


def centered_fft2(x: np.ndarray) -> np.ndarray:
    """Unnormalised forward DFT with DC at (n//2, n//2)."""
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(x)))


@dataclass
class VisibilitySet:
    u: np.ndarray
    v: np.ndarray
    values: np.ndarray
    sigma: np.ndarray
    grid_size: int
    rows: np.ndarray = field(repr=False, default=None)
    cols: np.ndarray = field(repr=False, default=None)
    mask: np.ndarray = field(repr=False, default=None)
    partner: np.ndarray = field(repr=False, default=None)

    @classmethod
    def from_arrays(cls, u, v, values, sigma, n, require_hermitian: bool = True) -> "VisibilitySet":
        """Build a set from sample arrays; cells are derived by rounding (u, v)."""
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        c = n // 2
        cov = _coverage_from_cells(n, u, v, np.rint(v).astype(np.int64) + c,
                                   np.rint(u).astype(np.int64) + c, require_hermitian)
        return cls(u, v, np.asarray(values, dtype=np.complex128),
                   np.asarray(sigma, dtype=np.float64), n, cov.rows, cov.cols, cov.mask,
                   cov.partner)

    def __len__(self):
        return len(self.u)

    @property
    def samples(self) -> list[UVSample]:
        return [UVSample(float(a), float(b), complex(z), float(s))
                for a, b, z, s in zip(self.u, self.v, self.values, self.sigma)]

    def zero_filled(self) -> np.ndarray:
        grid = np.zeros((self.grid_size, self.grid_size), dtype=np.complex128)
        grid[self.rows, self.cols] = self.values
        return grid

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("u,v,re,im,sigma\n")
        for a, b, z, s in zip(self.u, self.v, self.values, self.sigma):
            buf.write(f"{float(a)!r},{float(b)!r},{float(z.real)!r},{float(z.imag)!r},{float(s)!r}\n")
        return buf.getvalue()

    def save(self, csv_path, mask_path) -> None:
        try:
            Path(csv_path).write_text(self.to_csv())
        except OSError as exc:
            raise DataIOError(f"cannot write {csv_path}: {exc}") from exc
        tensorio.save(mask_path, self.mask.astype(np.float64))

    @classmethod
    def load(cls, csv_path, mask_path) -> "VisibilitySet":
        mask = tensorio.load(mask_path) > 0.5
        try:
            text = Path(csv_path).read_text()
        except OSError as exc:
            raise DataIOError(f"cannot read {csv_path}: {exc}") from exc
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["u", "v", "re", "im", "sigma"]:
            raise DataIOError(f"{csv_path}: bad visibility header")
        try:
            arr = np.array([[float(x) for x in r] for r in rows[1:]], dtype=np.float64).reshape(-1, 5)
        except ValueError as exc:
            raise DataIOError(f"{csv_path}: malformed visibility row ({exc})") from exc
        vs = cls.from_arrays(arr[:, 0], arr[:, 1], arr[:, 2] + 1j * arr[:, 3], arr[:, 4],
                             mask.shape[0])
        if not np.array_equal(vs.mask, mask):
            raise DataIOError(f"{csv_path}: samples disagree with stored mask")
        return vs


def sample_visibility(sky: SkyImage, coverage: Coverage, noise_sigma: float = 0.0,
                      seed: int | np.random.Generator = 0) -> VisibilitySet:
    """Read the sky's spectrum at covered cells and add circular Gaussian noise.

    The noise standard deviation per complex sample is
    ``noise_sigma * max|F(sky)|``; each conjugate pair shares one draw.
    """
    if sky.n != coverage.n:
        raise ShapeError(f"sky grid {sky.n} does not match coverage grid {coverage.n}")
    rng = np.random.default_rng(seed)
    F = centered_fft2(sky.pixels)
    sigma = float(noise_sigma) * float(np.abs(F).max())
    L = len(coverage.rows)
    idx = np.arange(L)
    lead = idx <= coverage.partner
    selfc = idx == coverage.partner
    vals = F[coverage.rows, coverage.cols].copy()
    vals[selfc] = vals[selfc].real
    n_lead = int(lead.sum())
    if sigma > 0:
        noise = rng.normal(0.0, sigma / np.sqrt(2), size=(n_lead, 2))
        nz = noise[:, 0] + 1j * noise[:, 1]
        nz[selfc[lead]] = nz[selfc[lead]].real
        vals[lead] += nz
    trail = ~lead
    vals[trail] = np.conj(vals[coverage.partner[trail]])
    return VisibilitySet(coverage.u.copy(), coverage.v.copy(), vals, np.full(L, sigma),
                         coverage.n, coverage.rows.copy(), coverage.cols.copy(),
                         coverage.mask.copy(), coverage.partner.copy())


def _grid_coords(n):
    y, x = np.mgrid[0:n, 0:n].astype(np.float64)
    return y, x


def _rotated(y, x, cy, cx, angle):
    dy, dx = y - cy, x - cx
    ca, sa = np.cos(angle), np.sin(angle)
    return dx * ca + dy * sa, -dx * sa + dy * ca


def make_synthetic_sky(kind: str, n: int = 64, seed: int | np.random.Generator = 0,
                       fov: float = 4.848e-10) -> SkyImage:
    """Peak-normalised synthetic sky of the requested morphology."""
    if kind not in SKY_KINDS:
        raise UsageError(f"unknown sky kind {kind!r}; expected one of {SKY_KINDS}")
    if n < 16 or n & (n - 1):
        raise UsageError(f"grid size must be a power of two >= 16, got {n}")
    rng = np.random.default_rng(seed)
    y, x = _grid_coords(n)
    meta: dict = {}
    if kind == "points":
        k = int(rng.integers(1, 6))
        lo, hi = n // 8, n - n // 8
        cells = rng.choice((hi - lo) ** 2, size=k, replace=False)
        img = np.zeros((n, n))
        fluxes = np.concatenate([[1.0], rng.uniform(0.2, 1.0, size=k - 1)])
        img[lo + cells // (hi - lo), lo + cells % (hi - lo)] = fluxes
    elif kind == "blobs":
        k = int(rng.integers(2, 5))
        img = np.zeros((n, n))
        comps = []
        for _ in range(k):
            s1, s2 = rng.uniform(1.5, max(n / 16, 2.0), size=2)
            cy, cx = n / 2 + rng.uniform(-n / 8, n / 8, size=2)
            amp = rng.uniform(0.3, 1.0)
            a, b = _rotated(y, x, cy, cx, rng.uniform(0, np.pi))
            img += amp * np.exp(-0.5 * ((a / s1) ** 2 + (b / s2) ** 2))
            comps.append((amp, s1, s2, cy, cx))
        meta["components"] = comps
    elif kind == "spiral":
        cy, cx = n / 2 + rng.uniform(-2, 2, size=2)
        a, b = _rotated(y, x, cy, cx, rng.uniform(0, 2 * np.pi))
        incl = rng.uniform(0.6, 1.0)
        r = np.hypot(a, b / incl) + 1e-9
        theta = np.arctan2(b / incl, a)
        pitch = rng.uniform(0.25, 0.45)
        arms = 2
        phase = theta - np.log(r) / pitch
        arm = (0.5 * (1 + np.cos(arms * phase))) ** 3
        scale = rng.uniform(n / 10, n / 6)
        img = arm * np.exp(-0.5 * (r / scale) ** 2) + 0.8 * np.exp(-0.5 * (r / (scale / 4)) ** 2)
    elif kind == "ring":
        cy, cx = n / 2 + rng.uniform(-1.5, 1.5, size=2)
        r_in = rng.uniform(n / 12, n / 6)
        r_out = r_in + rng.uniform(n / 16, n / 8)
        r = np.hypot(y - cy, x - cx)
        inside = (r >= r_in) & (r <= r_out)
        brightness = 1 + 0.5 * np.cos(np.arctan2(y - cy, x - cx) - rng.uniform(0, 2 * np.pi))
        img = np.where(inside, np.sin(np.pi * (r - r_in) / (r_out - r_in)) * brightness, 0.0)
        meta.update(center=(cy, cx), r_in=r_in, r_out=r_out)
    else:  # edge_disk
        cy, cx = n / 2 + rng.uniform(-2, 2, size=2)
        a, b = _rotated(y, x, cy, cx, rng.uniform(0, np.pi))
        h_major = rng.uniform(n / 14, n / 8)
        h_minor = h_major * rng.uniform(0.08, 0.2)
        bulge = rng.uniform(n / 40, n / 20)
        img = (np.exp(-np.abs(a) / h_major - np.abs(b) / h_minor)
               + rng.uniform(0.3, 0.8) * np.exp(-0.5 * (a ** 2 + b ** 2) / bulge ** 2))
    peak = img.max()
    meta["norm"] = float(peak)
    return SkyImage(np.maximum(img / peak, 0.0), fov=fov, label=kind, meta=meta)
