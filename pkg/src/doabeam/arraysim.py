"""Desk-scale microphone-array scene simulator.

Generates multichannel reverberant two-speaker mixtures with ground-truth
DOAs over a non-uniform linear array. Rooms are rendered with the image
source method using frequency-independent wall absorption from Sabine's
formula; an anechoic far-field path is provided as a validation oracle.

Azimuth convention: the array lies on the x axis, 0 deg points along +x
(endfire), 90 deg is broadside (+y). Labels live on the padded grid
[-15 deg, 195 deg]; sources are only ever placed inside [0 deg, 180 deg].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .signals import MultiChannelWave

__all__ = [
    "SPEED_OF_SOUND",
    "ArrayGeometry",
    "SceneSpec",
    "MixtureExample",
    "ScenePreset",
    "steering_delays",
    "fractional_delay_kernel",
    "simulate_far_field",
    "sabine_absorption",
    "shoebox_rir",
    "schroeder_decay_time",
    "mix_at_sir",
    "spatial_aliasing_frequency",
    "sample_scene",
    "render_scene",
]

SPEED_OF_SOUND = 343.0

DOA_MIN_DEG = -15.0
DOA_MAX_DEG = 195.0

# 65-tap windowed sinc: odd length so integer delays reduce to a unit impulse
_FRAC_TAPS = 65
_FRAC_CENTER = 32


@dataclass(frozen=True)
class ArrayGeometry:
    """Linear array described by adjacent-microphone spacings in meters."""

    spacings: tuple = (0.04, 0.04, 0.12, 0.04, 0.04)

    def __post_init__(self):
        if any(s <= 0 for s in self.spacings):
            raise ValueError(f"spacings must be positive, got {self.spacings}")

    @property
    def num_mics(self) -> int:
        return len(self.spacings) + 1

    @property
    def positions(self) -> np.ndarray:
        """Mic x coordinates centered at the array midpoint, shape (M,)."""
        x = np.concatenate([[0.0], np.cumsum(self.spacings)])
        return x - x[-1] / 2.0


@dataclass(frozen=True)
class SceneSpec:
    """Everything needed to re-render one mixture deterministically."""

    room_size: tuple  # (length, width, height) in meters
    rt60: float
    source_doas: tuple  # degrees, one per source
    source_distances: tuple  # meters from array center, one per source
    sir_db: float
    seed: int
    array_center: tuple = (2.0, 2.0, 1.5)
    max_order: int = 6
    duration_s: float = 2.0


@dataclass(frozen=True)
class MixtureExample:
    """A rendered scene: mixture, per-source images at the array, labels."""

    mixture: MultiChannelWave
    references: tuple  # per-source MultiChannelWave, SIR scaling applied
    doas: tuple
    sir_db: float


@dataclass(frozen=True)
class ScenePreset:
    """Sampling ranges for random scenes."""

    room_min: tuple = (4.0, 3.0, 3.0)
    room_max: tuple = (15.0, 15.0, 3.5)
    rt60_range: tuple = (0.2, 0.7)
    sir_range: tuple = (-10.0, 10.0)
    distance_range: tuple = (1.0, 3.0)
    min_doa_sep: float = 10.0
    max_order: int = 6
    duration_range: tuple = (2.0, 4.0)
    wall_margin: float = 0.5
    source_margin: float = 0.3


def steering_delays(geom: ArrayGeometry, doa_deg: float,
                    c: float = SPEED_OF_SOUND) -> np.ndarray:
    """Far-field arrival delays in seconds relative to the array center.

    delay[m] = -(x_m * cos(doa)) / c; broadside (90 deg) gives all zeros.
    """
    if not (DOA_MIN_DEG <= doa_deg <= DOA_MAX_DEG):
        raise ValueError(f"doa {doa_deg} outside the label grid "
                         f"[{DOA_MIN_DEG}, {DOA_MAX_DEG}]")
    return -(geom.positions * np.cos(np.deg2rad(doa_deg))) / c


def fractional_delay_kernel(delay_samples: float) -> np.ndarray:
    """Windowed-sinc interpolator for a sub-sample delay.

    Returns 65 taps with built-in group delay of 32 samples; for integer
    `delay_samples` = 0 this is exactly a shifted unit impulse.
    """
    n = np.arange(_FRAC_TAPS)
    window = np.blackman(_FRAC_TAPS)
    return window * np.sinc(n - _FRAC_CENTER - delay_samples)


def simulate_far_field(dry: MultiChannelWave, doa_deg: float, geom: ArrayGeometry,
                       c: float = SPEED_OF_SOUND) -> MultiChannelWave:
    """Anechoic plane-wave propagation of a mono signal onto the array."""
    if dry.num_channels != 1:
        raise ValueError("simulate_far_field expects a mono dry signal")
    fs = dry.sample_rate
    delays = steering_delays(geom, doa_deg, c=c) * fs
    x = dry.channel(0)
    out = np.empty((dry.num_samples, geom.num_mics))
    for m, d in enumerate(delays):
        h = fractional_delay_kernel(d)
        y = fftconvolve(x, h, mode="full")
        out[:, m] = y[_FRAC_CENTER : _FRAC_CENTER + dry.num_samples]
    return MultiChannelWave(out, sample_rate=fs)


def sabine_absorption(room_size, rt60: float) -> float:
    """Average wall absorption alpha = 0.1611 V / (S rt60), clipped to (0, 1)."""
    lx, ly, lz = room_size
    volume = lx * ly * lz
    surface = 2.0 * (lx * ly + lx * lz + ly * lz)
    alpha = 0.1611 * volume / (surface * rt60)
    return float(np.clip(alpha, 1e-6, 1.0 - 1e-6))


def _axis_images(src: float, length: float, n_max: int):
    """Per-axis image coordinates and reflection counts for a 1-D room [0, L]."""
    coords = []
    counts = []
    for q in range(-n_max, n_max + 1):
        coords.append(2.0 * q * length + src)
        counts.append(abs(2 * q))
        coords.append(2.0 * q * length - src)
        counts.append(abs(2 * q - 1))
    return np.array(coords), np.array(counts)


def shoebox_rir(room: SceneSpec, src_pos, mic_pos, max_order: int,
                fs: int = 16000, c: float = SPEED_OF_SOUND) -> np.ndarray:
    """Image-source impulse response for a shoebox room.

    Each image is attenuated by beta^(reflections) / distance where
    beta = sqrt(1 - alpha) with alpha from Sabine's formula, and placed at
    arrival time distance / c via windowed-sinc fractional delay.
    """
    src_pos = np.asarray(src_pos, dtype=np.float64)
    mic_pos = np.asarray(mic_pos, dtype=np.float64)
    size = np.asarray(room.room_size, dtype=np.float64)
    for name, p in (("source", src_pos), ("microphone", mic_pos)):
        if np.any(p <= 0) or np.any(p >= size):
            raise ValueError(f"{name} position {p} outside the room {tuple(size)}")
    beta = np.sqrt(1.0 - sabine_absorption(room.room_size, room.rt60))
    per_axis_n = max_order // 2 + 1
    ax = [_axis_images(src_pos[i], size[i], per_axis_n) for i in range(3)]
    cx, rx = ax[0]
    cy, ry = ax[1]
    cz, rz = ax[2]
    # all image combinations, then prune by total reflection count
    refl = rx[:, None, None] + ry[None, :, None] + rz[None, None, :]
    keep = refl <= max_order
    dx = cx[:, None, None] - mic_pos[0]
    dy = cy[None, :, None] - mic_pos[1]
    dz = cz[None, None, :] - mic_pos[2]
    dist = np.sqrt(
        np.broadcast_to(dx, refl.shape) ** 2
        + np.broadcast_to(dy, refl.shape) ** 2
        + np.broadcast_to(dz, refl.shape) ** 2
    )[keep]
    gains = beta ** refl[keep] / np.maximum(dist, 1e-3)
    arrivals = dist / c * fs
    length = int(np.ceil(arrivals.max())) + _FRAC_TAPS + 1
    rir = np.zeros(length)
    taps = np.arange(_FRAC_TAPS)
    window = np.blackman(_FRAC_TAPS)
    base = np.floor(arrivals).astype(int)
    frac = arrivals - base
    kernels = gains[:, None] * window[None, :] * np.sinc(taps[None, :] - _FRAC_CENTER - frac[:, None])
    starts = base - _FRAC_CENTER
    for s, k in zip(starts, kernels):
        lo = max(0, -s)
        rir[s + lo : s + _FRAC_TAPS] += k[lo:]
    return rir


def schroeder_decay_time(rir: np.ndarray, fs: int, decay_db: float = 60.0) -> float:
    """Time for the Schroeder backward-integrated energy to fall `decay_db`."""
    energy = np.cumsum(rir[::-1] ** 2)[::-1]
    total = energy[0]
    if total <= 0:
        raise ValueError("empty impulse response")
    level = 10.0 * np.log10(np.maximum(energy / total, 1e-30))
    below = np.nonzero(level <= -decay_db)[0]
    if below.size == 0:
        return len(rir) / fs
    return float(below[0]) / fs


def mix_at_sir(s1: MultiChannelWave, s2: MultiChannelWave, sir_db: float,
               doas: tuple = (), ref_channel: int = 0) -> MixtureExample:
    """Rescale s2 so the reference-channel SIR equals sir_db, then sum.

    The mixture equals the sum of the returned references sample-exactly.
    """
    if s1.samples.shape != s2.samples.shape:
        raise ValueError(f"shape mismatch {s1.samples.shape} vs {s2.samples.shape}")
    e1 = float(np.sum(s1.channel(ref_channel) ** 2))
    e2 = float(np.sum(s2.channel(ref_channel) ** 2))
    if e2 <= 0.0:
        raise ValueError("interference signal is silent; SIR scale undefined")
    scale = np.sqrt(e1 / (e2 * 10.0 ** (sir_db / 10.0)))
    s2_scaled = MultiChannelWave(s2.samples * scale, sample_rate=s2.sample_rate)
    mixture = MultiChannelWave(s1.samples + s2_scaled.samples, sample_rate=s1.sample_rate)
    return MixtureExample(mixture=mixture, references=(s1, s2_scaled),
                          doas=tuple(doas), sir_db=sir_db)


def spatial_aliasing_frequency(spacing: float, c: float = SPEED_OF_SOUND) -> float:
    """f = c / (2 d): above this, a pair's phase difference wraps."""
    if spacing <= 0:
        raise ValueError(f"spacing must be positive, got {spacing}")
    return c / (2.0 * spacing)


def sample_scene(rng: np.random.Generator, preset: ScenePreset,
                 geom: ArrayGeometry, seed: int) -> SceneSpec:
    """Draw a random scene honoring placement constraints."""
    size = tuple(rng.uniform(lo, hi) for lo, hi in zip(preset.room_min, preset.room_max))
    rt60 = float(rng.uniform(*preset.rt60_range))
    sir = float(rng.uniform(*preset.sir_range))
    duration = float(rng.uniform(*preset.duration_range))
    half_span = float(geom.positions[-1])
    margin = preset.wall_margin
    cx = rng.uniform(margin + half_span, size[0] - margin - half_span)
    cy = rng.uniform(margin, size[1] - margin)
    cz = min(max(1.5, margin), size[2] - margin)
    center = (float(cx), float(cy), float(cz))
    doas, dists = _place_sources(rng, preset, size, center)
    return SceneSpec(
        room_size=size,
        rt60=rt60,
        source_doas=doas,
        source_distances=dists,
        sir_db=sir,
        seed=seed,
        array_center=center,
        max_order=preset.max_order,
        duration_s=duration,
    )


def _source_position(center, doa_deg: float, distance: float) -> np.ndarray:
    rad = np.deg2rad(doa_deg)
    return np.array([
        center[0] + distance * np.cos(rad),
        center[1] + distance * np.sin(rad),
        center[2],
    ])


def _place_sources(rng, preset: ScenePreset, size, center):
    """Integer-degree DOAs in [0, 180] with minimum separation, inside the room."""
    for _ in range(1000):
        doas = tuple(sorted(int(d) for d in rng.integers(0, 181, size=2)))
        if abs(doas[0] - doas[1]) < preset.min_doa_sep:
            continue
        dists = tuple(float(d) for d in rng.uniform(*preset.distance_range, size=2))
        ok = True
        for doa, dist in zip(doas, dists):
            p = _source_position(center, doa, dist)
            if np.any(p <= preset.source_margin) or np.any(p >= np.asarray(size) - preset.source_margin):
                ok = False
                break
        if ok:
            return doas, dists
    raise RuntimeError("could not place sources; room too small for the preset")


def render_scene(scene: SceneSpec, dry1: MultiChannelWave, dry2: MultiChannelWave,
                 geom: ArrayGeometry, fs: int = 16000) -> MixtureExample:
    """Render a scene deterministically from its spec and two dry signals.

    References are the reverberant per-source images at the array after SIR
    scaling, so mixture = references[0] + references[1] holds sample-exactly.
    """
    n = int(round(scene.duration_s * fs))
    if dry1.num_samples < n or dry2.num_samples < n:
        raise ValueError(f"dry signals must cover {n} samples")
    images = []
    for dry, doa, dist in zip((dry1, dry2), scene.source_doas, scene.source_distances):
        src = _source_position(scene.array_center, doa, dist)
        chans = np.empty((n, geom.num_mics))
        for m, xm in enumerate(geom.positions):
            mic = np.array([scene.array_center[0] + xm, scene.array_center[1],
                            scene.array_center[2]])
            rir = shoebox_rir(scene, src, mic, scene.max_order, fs=fs)
            y = fftconvolve(dry.channel(0)[:n], rir)[:n]
            chans[:, m] = y
        images.append(MultiChannelWave(chans, sample_rate=fs))
    return mix_at_sir(images[0], images[1], scene.sir_db, doas=scene.source_doas)
