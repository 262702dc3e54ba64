"""Network input features: reference-channel magnitude and cosIPD.

The default layout concatenates one magnitude block of F bins with five
cosIPD blocks of F bins each (pairs between the first microphone and the
rest), giving D = 6 F = 1542 columns under the 512-point default STFT.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signals import ComplexSpectrogram

__all__ = ["FeatureMap", "magnitude", "cos_ipd", "assemble_features",
           "multichannel_magnitude", "default_pairs"]

SILENT_BIN = 1e-12


@dataclass(frozen=True)
class FeatureMap:
    """(T, D) feature rows: magnitude block then one block per mic pair."""

    data: np.ndarray
    num_bins: int
    pairs: tuple

    def magnitude_block(self) -> np.ndarray:
        return self.data[:, : self.num_bins]

    def ipd_block(self, p: int) -> np.ndarray:
        f = self.num_bins
        return self.data[:, (1 + p) * f : (2 + p) * f]


def default_pairs(num_channels: int) -> tuple:
    return tuple((0, m) for m in range(1, num_channels))


def magnitude(spec: ComplexSpectrogram, ref_channel: int = 0) -> np.ndarray:
    """|Y(t, f)| of one channel, shape (T, F)."""
    if not (0 <= ref_channel < spec.num_channels):
        raise ValueError(f"channel {ref_channel} out of range for M={spec.num_channels}")
    return np.abs(spec.data[:, :, ref_channel])


def cos_ipd(spec: ComplexSpectrogram, pairs=None) -> np.ndarray:
    """cos(arg Y_a - arg Y_b) per pair, shape (T, F, P).

    Bins where either channel magnitude falls below 1e-12 yield 1 (zero
    phase difference by convention), which keeps silence NaN-free.
    """
    if pairs is None:
        pairs = default_pairs(spec.num_channels)
    pairs = tuple(pairs)
    if len(pairs) == 0:
        raise ValueError("cos_ipd needs at least one microphone pair")
    for a, b in pairs:
        if not (0 <= a < spec.num_channels and 0 <= b < spec.num_channels):
            raise ValueError(f"pair ({a}, {b}) out of range for M={spec.num_channels}")
    out = np.empty(spec.data.shape[:2] + (len(pairs),))
    for i, (a, b) in enumerate(pairs):
        ya = spec.data[:, :, a]
        yb = spec.data[:, :, b]
        cross = ya * np.conj(yb)
        mag = np.abs(cross)
        silent = (np.abs(ya) < SILENT_BIN) | (np.abs(yb) < SILENT_BIN)
        with np.errstate(invalid="ignore", divide="ignore"):
            c = np.real(cross) / mag
        out[:, :, i] = np.where(silent, 1.0, np.clip(c, -1.0, 1.0))
    return out


def assemble_features(spec: ComplexSpectrogram, pairs=None) -> FeatureMap:
    """Concatenate the magnitude block and cosIPD blocks, shape (T, (1+P) F)."""
    if pairs is None:
        pairs = default_pairs(spec.num_channels)
    pairs = tuple(pairs)
    mag = magnitude(spec, ref_channel=0)
    ipd = cos_ipd(spec, pairs)
    t, f = mag.shape
    data = np.concatenate([mag] + [ipd[:, :, i] for i in range(len(pairs))], axis=1)
    return FeatureMap(data=data, num_bins=f, pairs=pairs)


def multichannel_magnitude(spec: ComplexSpectrogram) -> FeatureMap:
    """All-channel magnitudes, shape (T, M F); the spatial-feature-free input."""
    blocks = [np.abs(spec.data[:, :, m]) for m in range(spec.num_channels)]
    data = np.concatenate(blocks, axis=1)
    return FeatureMap(data=data, num_bins=spec.num_bins, pairs=())
