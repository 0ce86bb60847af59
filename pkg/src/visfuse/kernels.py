"""Hot inner loops, each in a numba and a pure-numpy flavour.

The public names (``scatter_bilinear``, ``gather_bilinear``, ``hogbom_loop``)
dispatch to the numba versions unless ``VISFUSE_DISABLE_NUMBA=1`` is set.
Both flavours stay importable under ``*_numba`` / ``*_numpy`` so they can be
cross-checked and benchmarked side by side.
"""
from __future__ import annotations

import numpy as np

from ._accel import USE_NUMBA, njit


def _corners(rows, cols):
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    fr = rows - r0
    fc = cols - c0
    rr = np.stack([r0, r0, r0 + 1, r0 + 1], axis=1)
    cc = np.stack([c0, c0 + 1, c0, c0 + 1], axis=1)
    ww = np.stack([(1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc), fr * fc], axis=1)
    return rr, cc, ww


def scatter_bilinear_numpy(feat, rows, cols, H, W):
    C, L = feat.shape
    rr, cc, ww = _corners(rows, cols)
    ok = (rr >= 0) & (rr < H) & (cc >= 0) & (cc < W)
    flat = (rr * W + cc)[ok]
    w = ww[ok]
    lidx = np.broadcast_to(np.arange(L)[:, None], rr.shape)[ok]
    acc = np.zeros((C, H * W))
    wsum = np.zeros(H * W)
    np.add.at(wsum, flat, w)
    for c in range(C):
        np.add.at(acc[c], flat, feat[c, lidx] * w)
    return acc.reshape(C, H, W), wsum.reshape(H, W)


def gather_bilinear_numpy(grid, rows, cols):
    C, H, W = grid.shape
    rr, cc, ww = _corners(rows, cols)
    ok = (rr >= 0) & (rr < H) & (cc >= 0) & (cc < W)
    w = np.where(ok, ww, 0.0)
    vals = grid[:, np.clip(rr, 0, H - 1), np.clip(cc, 0, W - 1)]   # (C, L, 4)
    return (vals * w[None]).sum(axis=2)


@njit
def scatter_bilinear_numba(feat, rows, cols, H, W):
    C, L = feat.shape
    acc = np.zeros((C, H, W))
    wsum = np.zeros((H, W))
    for l in range(L):
        r0 = int(np.floor(rows[l]))
        c0 = int(np.floor(cols[l]))
        fr = rows[l] - r0
        fc = cols[l] - c0
        for k in range(4):
            dr = k // 2
            dc = k % 2
            r = r0 + dr
            c = c0 + dc
            if r < 0 or r >= H or c < 0 or c >= W:
                continue
            w = (fr if dr else 1.0 - fr) * (fc if dc else 1.0 - fc)
            wsum[r, c] += w
            for ch in range(C):
                acc[ch, r, c] += feat[ch, l] * w
    return acc, wsum


@njit
def gather_bilinear_numba(grid, rows, cols):
    C, H, W = grid.shape
    L = rows.shape[0]
    out = np.zeros((C, L))
    for l in range(L):
        r0 = int(np.floor(rows[l]))
        c0 = int(np.floor(cols[l]))
        fr = rows[l] - r0
        fc = cols[l] - c0
        for k in range(4):
            dr = k // 2
            dc = k % 2
            r = r0 + dr
            c = c0 + dc
            if r < 0 or r >= H or c < 0 or c >= W:
                continue
            w = (fr if dr else 1.0 - fr) * (fc if dc else 1.0 - fc)
            for ch in range(C):
                out[ch, l] += grid[ch, r, c] * w
    return out


def hogbom_loop_numpy(residual, beam, gain, max_iter, stop_level):
    """Högbom minor cycle; ``residual`` is modified in place.

    Returns (rows, cols, fluxes, peaks) where ``peaks[k]`` is the absolute
    residual peak seen before iteration k, plus the final peak as last entry.
    """
    H, W = residual.shape
    cy, cx = H // 2, W // 2
    rows, cols, flux, peaks = [], [], [], []
    for _ in range(max_iter + 1):
        k = int(np.argmax(np.abs(residual)))
        r, c = divmod(k, W)
        p = residual[r, c]
        peaks.append(abs(p))
        if abs(p) <= stop_level or len(rows) == max_iter:
            break
        f = gain * p
        # the dirty image is periodic, so the beam is shifted circularly
        ri = (np.arange(H) - r + cy) % H
        ci = (np.arange(W) - c + cx) % W
        residual -= f * beam[np.ix_(ri, ci)]
        rows.append(r)
        cols.append(c)
        flux.append(f)
    return (np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64),
            np.array(flux, dtype=np.float64), np.array(peaks, dtype=np.float64))


@njit
def hogbom_loop_numba(residual, beam, gain, max_iter, stop_level):
    H, W = residual.shape
    cy, cx = H // 2, W // 2
    rows = np.empty(max_iter, dtype=np.int64)
    cols = np.empty(max_iter, dtype=np.int64)
    flux = np.empty(max_iter, dtype=np.float64)
    peaks = np.empty(max_iter + 1, dtype=np.float64)
    n = 0
    while True:
        best = -1.0
        r = 0
        c = 0
        for i in range(H):
            for j in range(W):
                a = abs(residual[i, j])
                if a > best:
                    best = a
                    r = i
                    c = j
        peaks[n] = best
        if best <= stop_level or n == max_iter:
            break
        f = gain * residual[r, c]
        for i in range(H):
            bi = (i - r + cy) % H
            for j in range(W):
                residual[i, j] -= f * beam[bi, (j - c + cx) % W]
        rows[n] = r
        cols[n] = c
        flux[n] = f
        n += 1
    return rows[:n].copy(), cols[:n].copy(), flux[:n].copy(), peaks[:n + 1].copy()


if USE_NUMBA:
    scatter_bilinear = scatter_bilinear_numba
    gather_bilinear = gather_bilinear_numba
    hogbom_loop = hogbom_loop_numba
else:
    scatter_bilinear = scatter_bilinear_numpy
    gather_bilinear = gather_bilinear_numpy
    hogbom_loop = hogbom_loop_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
