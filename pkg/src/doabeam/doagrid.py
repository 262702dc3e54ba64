"""Gaussian spatial-spectrum coding over the 210-bin azimuth grid.

Ground-truth DOAs are encoded as per-frame likelihood vectors that peak at
the true angle; estimates are decoded by argmax. The grid over-covers
[0, 180] deg with 15 deg of padding on both sides so edge Gaussians fit
without wrap-around.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["DoaGrid", "encode", "decode", "doa_accuracy", "doa_mae", "spectrum_mse"]


@dataclass(frozen=True)
class DoaGrid:
    """1-degree grid from `start` to `end`; representable angles are
    start .. end-1 inclusive (`bins` of them)."""

    start: float = -15.0
    end: float = 195.0
    sigma: float = 8.0

    def __post_init__(self):
        if self.end <= self.start:
            raise ValueError("grid end must exceed start")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    @property
    def bins(self) -> int:
        return int(round(self.end - self.start))

    def angles(self) -> np.ndarray:
        return self.start + np.arange(self.bins)


def encode(doa_true: float, grid: DoaGrid) -> np.ndarray:
    """Gaussian likelihood vector exp(-d(theta, doa)^2 / sigma^2), shape (bins,).

    The angular distance is the plain absolute difference in degrees (no
    wrap; the padded grid covers the linear array's front field).
    """
    angles = grid.angles()
    if not (angles[0] <= doa_true <= angles[-1]):
        raise ValueError(f"doa {doa_true} outside grid [{angles[0]}, {angles[-1]}]")
    d = np.abs(angles - doa_true)
    return np.exp(-(d * d) / (grid.sigma**2))


def decode(ss: np.ndarray, grid: DoaGrid) -> float:
    """Grid angle of the maximum bin; ties break toward the smaller angle."""
    ss = np.asarray(ss, dtype=np.float64)
    if ss.ndim != 1 or ss.size != grid.bins:
        raise ValueError(f"expected a {grid.bins}-bin spectrum, got shape {ss.shape}")
    if np.all(np.isnan(ss)):
        raise ValueError("cannot decode an all-NaN spectrum")
    return float(grid.angles()[np.nanargmax(ss)])


def doa_accuracy(est, truth, tol: float = 5.0) -> float:
    """Fraction of estimates within `tol` degrees of their targets."""
    est = np.asarray(est, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if est.shape != truth.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {truth.shape}")
    if est.size == 0:
        raise ValueError("empty estimate list")
    return float(np.mean(np.abs(est - truth) <= tol))


def doa_mae(est, truth) -> float:
    """Mean absolute error in degrees."""
    est = np.asarray(est, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if est.shape != truth.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {truth.shape}")
    if est.size == 0:
        raise ValueError("empty estimate list")
    return float(np.mean(np.abs(est - truth)))


def spectrum_mse(est, truth):
    """Squared distance between spectrum sequences: sum over bins, mean over frames.

    Accepts (T, bins) arrays (or single (bins,) vectors). When `est` is an
    autodiff Tensor the result is a Tensor; the gradient with respect to
    `est` is 2 (est - truth) / T.
    """
    from .autodiff import Tensor

    if isinstance(est, Tensor):
        t = Tensor(np.asarray(truth, dtype=np.float64))
        if est.shape != t.shape:
            raise ValueError(f"shape mismatch: {est.shape} vs {t.shape}")
        diff = est - t
        sq = (diff * diff).sum(axis=-1)
        return sq.mean() if sq.ndim > 0 else sq
    est = np.asarray(est, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if est.shape != truth.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {truth.shape}")
    sq = ((est - truth) ** 2).sum(axis=-1)
    return float(np.mean(sq))
