"""STFT analysis/synthesis and complex-tensor plumbing.

All operations are pure functions over immutable inputs. Complex
spectrograms are stored as (T, F, M) complex arrays; wherever complex data
feeds a neural layer it is split into concatenated real and imaginary
planes (see `model.py`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile

__all__ = [
    "MultiChannelWave",
    "StftConfig",
    "ComplexSpectrogram",
    "make_window",
    "stft",
    "istft",
    "hermitian_outer",
    "read_wav",
    "write_wav",
]

_WINDOWS = ("hamming", "hann", "sqrt_hann")


@dataclass(frozen=True)
class MultiChannelWave:
    """Time-domain samples, shape (L, M), dimensionless amplitude."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2:
            raise ValueError(f"samples must be (L,) or (L, M), got shape {s.shape}")
        if s.shape[0] < 1 or s.shape[1] < 1:
            raise ValueError(f"need L >= 1 and M >= 1, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError("samples contain non-finite values")
        object.__setattr__(self, "samples", s)

    @property
    def num_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def num_channels(self) -> int:
        return self.samples.shape[1]

    def channel(self, c: int) -> np.ndarray:
        return self.samples[:, c]


@dataclass(frozen=True)
class StftConfig:
    """Analysis/synthesis configuration.

    Defaults are a 512-point FFT over a 32 ms window with 50% stride at
    16 kHz. Round-trip reconstruction is exact (to normalization epsilon)
    whenever hop <= win_length / 2.
    """

    fft_size: int = 512
    win_length: int = 512
    hop: int = 256
    window: str = "hamming"

    def __post_init__(self):
        if not (0 < self.hop <= self.win_length <= self.fft_size):
            raise ValueError(
                f"need 0 < hop <= win_length <= fft_size, got {self.hop}, "
                f"{self.win_length}, {self.fft_size}"
            )
        if self.window not in _WINDOWS:
            raise ValueError(f"unknown window {self.window!r}, pick one of {_WINDOWS}")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1


@dataclass(frozen=True)
class ComplexSpectrogram:
    """Complex STFT tensor, shape (T, F, M)."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.complex128)
        if d.ndim == 2:
            d = d[:, :, None]
        if d.ndim != 3:
            raise ValueError(f"data must be (T, F) or (T, F, M), got shape {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("spectrogram contains non-finite values")
        object.__setattr__(self, "data", d)

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def num_bins(self) -> int:
        return self.data.shape[1]

    @property
    def num_channels(self) -> int:
        return self.data.shape[2]


def make_window(cfg: StftConfig) -> np.ndarray:
    """Periodic analysis window of win_length samples."""
    n = np.arange(cfg.win_length)
    if cfg.window == "hamming":
        return 0.54 - 0.46 * np.cos(2 * np.pi * n / cfg.win_length)
    if cfg.window == "hann":
        return 0.5 - 0.5 * np.cos(2 * np.pi * n / cfg.win_length)
    # sqrt_hann
    return np.sqrt(0.5 - 0.5 * np.cos(2 * np.pi * n / cfg.win_length))


def stft(wave: MultiChannelWave, cfg: StftConfig, center: bool = True) -> ComplexSpectrogram:
    """Short-time Fourier transform per channel.

    With center=True the signal is reflect-padded by win_length/2 on both
    sides so frame centers align with sample times, giving
    T = 1 + floor(L / hop). With center=False no padding is applied and
    T = 1 + floor((L - win_length) / hop).

    Channel c of the output derives only from channel c of the input.
    """
    x = wave.samples
    if not np.all(np.isfinite(x)):
        raise ValueError("stft: non-finite input")
    win = cfg.win_length
    if center:
        half = win // 2
        x = np.pad(x, ((half, half), (0, 0)), mode="reflect")
    if x.shape[0] < win:
        raise ValueError(
            f"stft: signal too short ({x.shape[0]} samples after padding) for "
            f"win_length {win}"
        )
    hop = cfg.hop
    t_frames = 1 + (x.shape[0] - win) // hop
    l_stride, m_stride = x.strides
    frames = np.lib.stride_tricks.as_strided(
        x,
        shape=(t_frames, win, x.shape[1]),
        strides=(hop * l_stride, l_stride, m_stride),
        writeable=False,
    )
    w = make_window(cfg)
    spec = np.fft.rfft(frames * w[None, :, None], n=cfg.fft_size, axis=1)
    return ComplexSpectrogram(spec)


def _ola_window_sq(cfg: StftConfig, t_frames: int) -> np.ndarray:
    w2 = make_window(cfg) ** 2
    out = np.zeros((t_frames - 1) * cfg.hop + cfg.win_length)
    for t in range(t_frames):
        out[t * cfg.hop : t * cfg.hop + cfg.win_length] += w2
    return out


def istft(spec: ComplexSpectrogram, cfg: StftConfig, length: int,
          center: bool = True) -> MultiChannelWave:
    """Overlap-add synthesis with squared-window normalization.

    The overlap-added output is divided by the overlap-added squared window
    (floored at 1e-8) and truncated or zero-padded to `length` samples.
    """
    if spec.num_bins != cfg.num_bins:
        raise ValueError(
            f"istft: spectrogram has {spec.num_bins} bins but config implies {cfg.num_bins}"
        )
    t_frames = spec.num_frames
    win, hop = cfg.win_length, cfg.hop
    w = make_window(cfg)
    frames = np.fft.irfft(spec.data, n=cfg.fft_size, axis=1)[:, :win, :]
    frames = frames * w[None, :, None]
    l_pad = (t_frames - 1) * hop + win
    y = np.zeros((l_pad, spec.num_channels))
    for t in range(t_frames):
        y[t * hop : t * hop + win] += frames[t]
    wsum = np.maximum(_ola_window_sq(cfg, t_frames), 1e-8)
    y /= wsum[:, None]
    start = win // 2 if center else 0
    y = y[start : start + length]
    if y.shape[0] < length:
        y = np.pad(y, ((0, length - y.shape[0]), (0, 0)))
    return MultiChannelWave(y, sample_rate=16000)


def hermitian_outer(v: np.ndarray) -> np.ndarray:
    """Outer product v v^H of a complex vector: result[a, b] = v[a] * conj(v[b]).

    Hermitian, positive semidefinite and rank <= 1 by construction.
    """
    v = np.asarray(v, dtype=np.complex128)
    if v.ndim != 1:
        raise ValueError(f"hermitian_outer expects a vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("hermitian_outer: non-finite input")
    return np.outer(v, np.conj(v))


def read_wav(path, expected_rate: int | None = None) -> MultiChannelWave:
    """Read a 16-bit PCM or 32-bit float RIFF file.

    A sample-rate mismatch with `expected_rate` is an error; this module
    never resamples.
    """
    rate, data = wavfile.read(path)
    if expected_rate is not None and rate != expected_rate:
        raise ValueError(f"{path}: sample rate {rate} != expected {expected_rate}")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32 or data.dtype == np.float64:
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    return MultiChannelWave(samples, sample_rate=int(rate))


def write_wav(path, wave: MultiChannelWave, fmt: str = "float32") -> None:
    """Write a WAV file as 32-bit float (exact) or 16-bit PCM."""
    data = wave.samples
    if data.shape[1] == 1:
        data = data[:, 0]
    if fmt == "float32":
        wavfile.write(path, wave.sample_rate, data.astype(np.float32))
    elif fmt == "int16":
        clipped = np.clip(data, -1.0, 1.0)
        wavfile.write(path, wave.sample_rate, np.round(clipped * 32767.0).astype(np.int16))
    else:
        raise ValueError(f"unsupported format {fmt!r}")
