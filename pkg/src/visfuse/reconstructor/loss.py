"""Amplitude-weighted spectral loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateInputError, ShapeError
from ..numerics import Tensor, record


@dataclass
class LossReport:
    loss: Tensor
    abs_delta: np.ndarray
    omega: np.ndarray
    psnr: float | None = None
    ssim: float | None = None

    @property
    def value(self) -> float:
        return float(self.loss.data)


def weighted_sq_error(pred: Tensor, truth: np.ndarray, weight: np.ndarray) -> Tensor:
    """``mean(weight * |pred - truth|^2)`` over cells, ``weight`` held constant.

    ``pred`` is an (n, n, 2) re/im tensor; ``truth`` a complex (n, n) grid.
    """
    if pred.shape[:-1] != truth.shape or weight.shape != truth.shape:
        raise ShapeError(f"loss shapes differ: pred {pred.shape}, truth {truth.shape}, "
                         f"weight {weight.shape}")
    dre = pred.data[..., 0] - truth.real
    dim = pred.data[..., 1] - truth.imag
    ncell = truth.size
    val = float(np.mean(weight * (dre * dre + dim * dim)))

    def bw(g):
        k = 2.0 * float(g) / ncell * weight
        return (np.stack([k * dre, k * dim], axis=-1),)

    return record(np.asarray(val), (pred,), bw)


def spectral_loss(pred: Tensor, truth: np.ndarray) -> LossReport:
    """Loss with per-cell weight ``(rho / max rho + 1) * |delta|`` (not differentiated)."""
    truth = np.asarray(truth, dtype=np.complex128)
    if pred.shape[:-1] != truth.shape:
        raise ShapeError(f"prediction {pred.shape} does not match truth {truth.shape}")
    rho = np.abs(truth)
    rmax = rho.max()
    if rmax == 0:
        raise DegenerateInputError("ground-truth grid is identically zero")
    delta = (pred.data[..., 0] - truth.real) + 1j * (pred.data[..., 1] - truth.imag)
    ad = np.abs(delta)
    omega = (rho / rmax + 1.0) * ad
    return LossReport(weighted_sq_error(pred, truth, omega), ad, omega)
