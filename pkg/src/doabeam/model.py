"""The direction-aware neural beamformer.

One shared estimator predicts per-frame complex ratio filters for both
speakers' speech and interference; layer-normalized covariance features are
computed from the filtered spectrograms; a per-source DOA estimator projects
them onto the azimuth grid and hands its directional embedding to a
per-frequency recurrent beamformer that emits frame-level complex weights.
Losses (spatial-spectrum MSE, time-domain wSDR, the weighted multi-task sum)
and a classical MVDR oracle live here too.

Complex quantities inside the differentiable graph are carried as paired
real/imaginary tensors; covariance features flatten the real block followed
by the imaginary block, row-major within blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, concat, relu, sigmoid
from .doagrid import DoaGrid
from .features import FeatureMap, assemble_features, multichannel_magnitude
from .nnet import GRU, Conv2d, LayerNorm, Linear, Parameter
from .signals import ComplexSpectrogram, MultiChannelWave, StftConfig, istft, make_window, stft

__all__ = [
    "NumericalFailure",
    "ModelConfig",
    "ComplexRatioFilter",
    "CovariancePair",
    "DirectionalEmbedding",
    "BeamWeights",
    "BeamformerModel",
    "ForwardResult",
    "estimate_crf",
    "apply_crf",
    "covariance",
    "doa_estimator_forward",
    "beamform_weights",
    "apply_beamformer",
    "istft_tensor",
    "wsdr_loss",
    "total_loss",
    "angle_sort_targets",
    "upit_pair_loss",
    "forward",
    "mvdr_oracle",
]


class NumericalFailure(RuntimeError):
    """Raised when a computation degenerates (NaN loss, singular covariance)."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture sizes; defaults follow the full-scale recipe.

    The desk preset (config module) shrinks crf_hidden/beam_hidden to 64 so
    training completes on a laptop CPU. `ablation` selects the variant:
    "full", "no_de" (beamformer sees covariances only, no DOA estimator), or
    "no_de_ipd" (additionally replaces the cosIPD input with all-channel
    magnitudes).
    """

    num_mics: int = 6
    num_bins: int = 257
    crf_hidden: int = 500
    crf_fc_layers: int = 4
    doa_hidden: int = 210
    beam_hidden: int = 300
    crf_context: int = 1  # 3x3 tap neighborhood
    grid: DoaGrid = field(default_factory=DoaGrid)
    share_branches: bool = True
    ablation: str = "full"
    seed: int = 0

    def __post_init__(self):
        if self.ablation not in ("full", "no_de", "no_de_ipd"):
            raise ValueError(f"unknown ablation {self.ablation!r}")
        if min(self.num_mics, self.num_bins, self.crf_hidden, self.doa_hidden,
               self.beam_hidden) <= 0:
            raise ValueError("all sizes must be positive")

    @property
    def num_taps(self) -> int:
        return (2 * self.crf_context + 1) ** 2

    @property
    def feature_dim(self) -> int:
        # magnitude + (M-1) cosIPD blocks, or M magnitude blocks: both M*F
        return self.num_mics * self.num_bins

    @property
    def num_sources(self) -> int:
        return 2


@dataclass(frozen=True)
class ComplexRatioFilter:
    """Per-unit complex filter taps, shape (T, F, M, K, K); tap (t1, t2)
    indexes the time/frequency neighbor at offset (t1 - K//2, t2 - K//2)."""

    taps: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.taps, dtype=np.complex128)
        if t.ndim != 5 or t.shape[3] != t.shape[4]:
            raise ValueError(f"taps must be (T, F, M, K, K), got {t.shape}")
        if not np.all(np.isfinite(t)):
            raise ValueError("filter taps contain non-finite values")
        object.__setattr__(self, "taps", t)


@dataclass(frozen=True)
class CovariancePair:
    """Layer-normalized speech/interference covariance features, (T, F, 2M^2)."""

    phi_s: np.ndarray
    phi_i: np.ndarray


@dataclass(frozen=True)
class DirectionalEmbedding:
    """Per-unit projection onto the azimuth grid, shape (T, F, bins)."""

    values: np.ndarray


@dataclass(frozen=True)
class BeamWeights:
    """Per-source frame-level weights, shape (T, F, M) complex."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.complex128)
        if w.ndim != 3:
            raise ValueError(f"weights must be (T, F, M), got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights contain non-finite values")
        object.__setattr__(self, "w", w)


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

class _DoaNet:
    def __init__(self, cfg: ModelConfig, rng, name: str):
        m2 = cfg.num_mics**2
        bins = cfg.grid.bins
        self.conv1 = Conv2d(4 * m2, bins, 1, 1, rng, f"{name}.conv1")
        self.conv2 = Conv2d(1, 1, 3, 3, rng, f"{name}.conv2", padding=1)
        self.gru = GRU(bins, cfg.doa_hidden, 2, rng, f"{name}.gru")
        self.head = Linear(cfg.doa_hidden, bins, rng, f"{name}.head")

    def params(self):
        return self.conv1.params() + self.conv2.params() + self.gru.params() + self.head.params()


class _BeamNet:
    def __init__(self, cfg: ModelConfig, rng, name: str):
        m2 = cfg.num_mics**2
        width = 4 * m2 + (cfg.grid.bins if cfg.ablation == "full" else 0)
        self.fc1 = Linear(width, cfg.beam_hidden, rng, f"{name}.fc1")
        self.gru = GRU(cfg.beam_hidden, cfg.beam_hidden, 2, rng, f"{name}.gru")
        self.head = Linear(cfg.beam_hidden, 2 * cfg.num_mics, rng, f"{name}.head")
        # start as the reference-channel selector so the initial output is
        # the unprocessed mixture channel rather than silence
        self.head.b.data[0] = 1.0

    def params(self):
        return self.fc1.params() + self.gru.params() + self.head.params()


class BeamformerModel:
    """Parameter container and forward passes for all three subnetworks."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        m, f = cfg.num_mics, cfg.num_bins
        h = cfg.crf_hidden
        self.crf_gru = GRU(cfg.feature_dim, h, 2, rng, "crf.gru")
        self.crf_fcs = [Linear(h, h, rng, f"crf.fc{i}") for i in range(cfg.crf_fc_layers)]
        self.crf_head = Linear(h, f * m * cfg.num_taps * 2 * 4, rng, "crf.head")
        self.ln_speech = LayerNorm(2 * m * m, "cov.ln_speech")
        self.ln_interf = LayerNorm(2 * m * m, "cov.ln_interf")
        n_branches = 1 if cfg.share_branches else 2
        if cfg.ablation == "full":
            self.doa_nets = [_DoaNet(cfg, rng, f"doa{i}") for i in range(n_branches)]
        else:
            self.doa_nets = []
        self.beam_nets = [_BeamNet(cfg, rng, f"beam{i}") for i in range(n_branches)]

    def params(self) -> list[Parameter]:
        out = self.crf_gru.params()
        for fc in self.crf_fcs:
            out += fc.params()
        out += self.crf_head.params()
        out += self.ln_speech.params() + self.ln_interf.params()
        for net in self.doa_nets:
            out += net.params()
        for net in self.beam_nets:
            out += net.params()
        return out

    def param_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data for p in self.params()}

    def load_param_dict(self, d: dict[str, np.ndarray]) -> None:
        own = {p.name: p for p in self.params()}
        missing = set(own) - set(d)
        extra = set(d) - set(own)
        if missing or extra:
            raise ValueError(f"checkpoint mismatch: missing {sorted(missing)}, "
                             f"unexpected {sorted(extra)}")
        for name, p in own.items():
            if d[name].shape != p.data.shape:
                raise ValueError(f"{name}: shape {d[name].shape} != {p.data.shape}")
            p.data = np.array(d[name], dtype=np.float64)

    # -- cRF estimator -----------------------------------------------------
    def crf_tensors(self, feats: Tensor):
        """Predict tap tensors for the four roles.

        Returns a list [(re, im)] indexed by role: (source 0 speech,
        source 0 interference, source 1 speech, source 1 interference);
        each part has shape (T, F, M, num_taps).
        """
        cfg = self.cfg
        t_frames = feats.shape[0]
        x = self.crf_gru(feats)
        for fc in self.crf_fcs:
            x = relu(fc(x))
        x = self.crf_head(x)
        x = x.reshape(t_frames, 4, cfg.num_bins, cfg.num_mics, cfg.num_taps, 2)
        out = []
        for role in range(4):
            part = x[:, role]
            out.append((part[..., 0], part[..., 1]))
        return out

    # -- DOA estimator -----------------------------------------------------
    def doa_forward(self, phi_s: Tensor, phi_i: Tensor, branch: int = 0):
        """Covariances -> (directional embedding (T, F, bins), spectrum (T, bins))."""
        if not self.doa_nets:
            raise ValueError(f"ablation {self.cfg.ablation!r} has no DOA estimator")
        net = self.doa_nets[min(branch, len(self.doa_nets) - 1)]
        t_frames, f_bins = phi_s.shape[0], phi_s.shape[1]
        bins = self.cfg.grid.bins
        x = concat([phi_s, phi_i], axis=-1)  # (T, F, 4M^2)
        x4 = x.transpose(2, 0, 1).reshape(1, x.shape[-1], t_frames, f_bins)
        de4 = relu(net.conv1(x4))  # (1, bins, T, F)
        de = de4.reshape(bins, t_frames, f_bins).transpose(1, 2, 0)  # (T, F, bins)
        # conv over (time, DOA) per frequency, then aggregate over frequency
        planes = de.transpose(1, 0, 2).reshape(f_bins, 1, t_frames, bins)
        c2 = net.conv2(planes).reshape(f_bins, t_frames, bins)
        logits = c2.mean(axis=0)  # (T, bins)
        hseq = net.gru(logits)
        ss = sigmoid(net.head(hseq))
        return de, ss

    # -- beamformer ----------------------------------------------------------
    def beam_forward(self, phi_s: Tensor, phi_i: Tensor, de: Tensor | None,
                     branch: int = 0):
        """Per-frequency recurrent weight estimator -> (w_re, w_im), (T, F, M)."""
        net = self.beam_nets[min(branch, len(self.beam_nets) - 1)]
        m = self.cfg.num_mics
        parts = [phi_s, phi_i] if de is None else [phi_s, phi_i, de]
        x = concat(parts, axis=-1)  # (T, F, width)
        x = relu(net.fc1(x))
        h = net.gru(x)  # GRU over time, frequencies ride along as batch
        out = net.head(h)  # (T, F, 2M)
        return out[..., :m], out[..., m:]


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def _complex_planes(y: np.ndarray):
    return np.ascontiguousarray(y.real), np.ascontiguousarray(y.imag)


def _shifted_planes(y: np.ndarray, context: int):
    """Zero-padded (real, imag) neighbor planes of a (T, F, M) spectrogram,
    row-major over (time offset, frequency offset)."""
    c = context
    yp = np.pad(y, ((c, c), (c, c), (0, 0)))
    t, f = y.shape[0], y.shape[1]
    planes = []
    for dt in range(-c, c + 1):
        for df in range(-c, c + 1):
            sl = yp[c + dt : c + dt + t, c + df : c + df + f, :]
            planes.append(_complex_planes(sl))
    return planes


def _apply_crf_tensors(planes, crf_re: Tensor, crf_im: Tensor):
    """Multiply-accumulate taps (T, F, M, K^2) against shifted planes."""
    s_re = None
    s_im = None
    for k, (yr, yi) in enumerate(planes):
        cr = crf_re[..., k]
        ci = crf_im[..., k]
        re_k = cr * yr - ci * yi
        im_k = cr * yi + ci * yr
        s_re = re_k if s_re is None else s_re + re_k
        s_im = im_k if s_im is None else s_im + im_k
    return s_re, s_im


def apply_crf(spec: ComplexSpectrogram, crf: ComplexRatioFilter) -> ComplexSpectrogram:
    """Filter each channel's time-frequency neighborhood with its complex taps.

    Out-of-range neighbors read as zero; the operation is linear in both the
    spectrogram and the taps.
    """
    t, f, m = spec.data.shape
    kt = crf.taps.shape[3]
    if crf.taps.shape[:3] != (t, f, m):
        raise ValueError(f"filter shape {crf.taps.shape} does not match spectrogram "
                         f"{spec.data.shape}")
    context = kt // 2
    planes = _shifted_planes(spec.data, context)
    flat = crf.taps.reshape(t, f, m, kt * kt)
    s_re, s_im = _apply_crf_tensors(planes, Tensor(flat.real), Tensor(flat.imag))
    return ComplexSpectrogram(s_re.data + 1j * s_im.data)


def estimate_crf(model: BeamformerModel, features: FeatureMap) -> list[ComplexRatioFilter]:
    """Run the cRF estimator and reshape taps to (T, F, M, K, K) per role."""
    cfg = model.cfg
    if features.data.shape[1] != cfg.feature_dim:
        raise ValueError(f"feature width {features.data.shape[1]} != expected {cfg.feature_dim}")
    k = 2 * cfg.crf_context + 1
    out = []
    for re, im in model.crf_tensors(Tensor(features.data)):
        taps = re.data + 1j * im.data
        t, f, m = taps.shape[:3]
        out.append(ComplexRatioFilter(taps.reshape(t, f, m, k, k)))
    return out


def _covariance_tensor(s_re: Tensor, s_im: Tensor, ln: LayerNorm) -> Tensor:
    t, f, m = s_re.shape
    re_a = s_re.reshape(t, f, m, 1)
    re_b = s_re.reshape(t, f, 1, m)
    im_a = s_im.reshape(t, f, m, 1)
    im_b = s_im.reshape(t, f, 1, m)
    cov_re = re_a * re_b + im_a * im_b
    cov_im = im_a * re_b - re_a * im_b
    flat = concat([cov_re.reshape(t, f, m * m), cov_im.reshape(t, f, m * m)], axis=-1)
    return ln(flat)


def covariance(s_hat: ComplexSpectrogram, gain: np.ndarray, bias: np.ndarray,
               eps: float = 1e-5) -> np.ndarray:
    """Per-unit outer product v v^H, flattened (real block then imaginary
    block) and layer-normalized; shape (T, F, 2 M^2)."""
    m = s_hat.num_channels
    ln = LayerNorm(2 * m * m, "cov.tmp", eps=eps)
    ln.gain.data = np.asarray(gain, dtype=np.float64)
    ln.bias.data = np.asarray(bias, dtype=np.float64)
    re, im = _complex_planes(s_hat.data)
    return _covariance_tensor(Tensor(re), Tensor(im), ln).data


def doa_estimator_forward(model: BeamformerModel, phi_s: np.ndarray, phi_i: np.ndarray,
                          branch: int = 0):
    """Numpy-facing wrapper: covariances -> (DirectionalEmbedding, spectra array)."""
    de, ss = model.doa_forward(Tensor(phi_s), Tensor(phi_i), branch)
    return DirectionalEmbedding(de.data), ss.data


def beamform_weights(model: BeamformerModel, phi_s: np.ndarray, phi_i: np.ndarray,
                     de: np.ndarray | None, branch: int = 0) -> BeamWeights:
    """Numpy-facing wrapper around the recurrent weight estimator."""
    de_t = None if de is None else Tensor(de)
    w_re, w_im = model.beam_forward(Tensor(phi_s), Tensor(phi_i), de_t, branch)
    return BeamWeights(w_re.data + 1j * w_im.data)


def _apply_beamformer_tensors(w_re: Tensor, w_im: Tensor, yr: np.ndarray, yi: np.ndarray):
    # s = sum_m conj(w_m) y_m
    s_re = (w_re * yr + w_im * yi).sum(axis=-1)
    s_im = (w_re * yi - w_im * yr).sum(axis=-1)
    return s_re, s_im


def apply_beamformer(weights: BeamWeights, spec: ComplexSpectrogram) -> ComplexSpectrogram:
    """Conjugate inner product w^H Y per time-frequency unit -> mono spectrogram."""
    if weights.w.shape != spec.data.shape:
        raise ValueError(f"weights {weights.w.shape} do not match spectrogram "
                         f"{spec.data.shape}")
    yr, yi = _complex_planes(spec.data)
    s_re, s_im = _apply_beamformer_tensors(Tensor(weights.w.real), Tensor(weights.w.imag), yr, yi)
    return ComplexSpectrogram(s_re.data + 1j * s_im.data)


# -- differentiable synthesis -------------------------------------------------

def istft_tensor(s_re: Tensor, s_im: Tensor, cfg: StftConfig, length: int) -> Tensor:
    """Inverse STFT of a mono (T, F) spectrogram pair as an autodiff primitive.

    Forward delegates to the synthesis in `signals`; backward applies the
    exact adjoint of that linear map (overlap-add, squared-window
    normalization and the one-sided spectrum weighting).
    """
    spec = ComplexSpectrogram(s_re.data + 1j * s_im.data)
    y = istft(spec, cfg, length).samples[:, 0]
    req = s_re.requires_grad or s_im.requires_grad
    if not req:
        return Tensor(y)
    t_frames = s_re.shape[0]

    def bwd(gy):
        gre, gim = _istft_adjoint(np.asarray(gy), cfg, t_frames, length)
        if s_re.requires_grad:
            s_re.accumulate(gre)
        if s_im.requires_grad:
            s_im.accumulate(gim)

    return Tensor(y, True, (s_re, s_im), bwd)


def _istft_adjoint(gy: np.ndarray, cfg: StftConfig, t_frames: int, length: int):
    from .signals import _ola_window_sq

    win, hop, fft = cfg.win_length, cfg.hop, cfg.fft_size
    l_pad = (t_frames - 1) * hop + win
    start = win // 2
    gp = np.zeros(l_pad)
    avail = min(length, l_pad - start)
    gp[start : start + avail] = gy[:avail]
    gp /= np.maximum(_ola_window_sq(cfg, t_frames), 1e-8)
    w = make_window(cfg)
    frames = np.zeros((t_frames, fft))
    for t in range(t_frames):
        frames[t, :win] = gp[t * hop : t * hop + win] * w
    spec = np.fft.rfft(frames, axis=1)
    scale = np.full(fft // 2 + 1, 2.0 / fft)
    scale[0] = 1.0 / fft
    if fft % 2 == 0:
        scale[-1] = 1.0 / fft
    gre = spec.real * scale
    gim = spec.imag * scale
    gim[:, 0] = 0.0
    if fft % 2 == 0:
        gim[:, -1] = 0.0
    return gre, gim


# -- losses -------------------------------------------------------------------

def _cosine_similarity(ref: np.ndarray, est: Tensor):
    """<ref, est> / (||ref|| ||est||); zero-norm inputs contribute 0."""
    ref_norm = float(np.linalg.norm(ref))
    est_norm_sq = float(np.sum(est.data * est.data))
    if ref_norm < 1e-12 or est_norm_sq < 1e-24:
        return Tensor(0.0)
    num = (est * ref).sum()
    from .autodiff import sqrt as t_sqrt

    den = t_sqrt((est * est).sum()) * ref_norm
    return num / den


def wsdr_loss(y: np.ndarray, s: np.ndarray, s_hat: Tensor):
    """Weighted source-to-distortion cosine loss in [-1, 1].

    Args:
        y: mixture, reference channel, (L,).
        s: target source at the same channel, (L,).
        s_hat: estimated source, Tensor (L,).
    The interference pair i = y - s, i_hat = y - s_hat is formed internally;
    the target/interference terms are weighted by the energy ratio
    ||s||^2 / (||s||^2 + ||i||^2).
    """
    y = np.asarray(y, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if y.shape != s.shape or y.shape != tuple(s_hat.shape):
        raise ValueError(f"length mismatch: y {y.shape}, s {s.shape}, s_hat {s_hat.shape}")
    i = y - s
    i_hat = Tensor(y) - s_hat
    es = float(np.sum(s * s))
    ei = float(np.sum(i * i))
    if es + ei <= 0.0:
        return Tensor(0.0)
    alpha_energy = es / (es + ei)
    cos_s = _cosine_similarity(s, s_hat)
    cos_i = _cosine_similarity(i, i_hat)
    return (-alpha_energy) * cos_s + (-(1.0 - alpha_energy)) * cos_i


def total_loss(ss_losses, wsdr_losses, alpha_w: float, beta_w: float):
    """Multi-task objective alpha_w * sum(L_ss) + beta_w * sum(L_wsdr)."""
    out = None
    for term in ss_losses:
        scaled = term * alpha_w
        out = scaled if out is None else out + scaled
    for term in wsdr_losses:
        scaled = term * beta_w
        out = scaled if out is None else out + scaled
    if out is None:
        raise ValueError("no loss terms supplied")
    return out


def angle_sort_targets(doas, sources):
    """Order (DOA, reference) pairs jointly by ascending DOA.

    Branch 0 always receives the smaller angle, so the output-branch roles
    are a deterministic function of the DOA pair.
    """
    if doas[0] == doas[1]:
        raise ValueError("equal DOAs cannot be sorted; enforce separation upstream")
    if doas[0] < doas[1]:
        return tuple(doas), tuple(sources)
    return (doas[1], doas[0]), (sources[1], sources[0])


def upit_pair_loss(y: np.ndarray, estimates, references):
    """Separation loss minimized over both output-to-reference assignments.

    Args:
        y: mixture reference channel, (L,).
        estimates: two Tensors (L,).
        references: two arrays (L,).
    Returns:
        (loss Tensor, permutation tuple p) with p[i] the reference index
        assigned to estimate i.
    """
    best = None
    best_perm = None
    for perm in ((0, 1), (1, 0)):
        loss = wsdr_loss(y, references[perm[0]], estimates[0]) + \
            wsdr_loss(y, references[perm[1]], estimates[1])
        if best is None or loss.data < best.data:
            best = loss
            best_perm = perm
    return best, best_perm


# -- full forward pass ---------------------------------------------------------

@dataclass
class ForwardResult:
    waveforms: list  # per-source Tensor (L,)
    spectra: list  # per-source Tensor (T, bins); empty for no-DE ablations
    beam_specs: list  # per-source (re, im) Tensor pair (T, F)
    diagnostics: dict


def forward(model: BeamformerModel, mixture: MultiChannelWave, stft_cfg: StftConfig,
            diagnostics: bool = False) -> ForwardResult:
    """Full differentiable chain from the mixture waveform to both sources.

    stft -> features -> cRF estimation -> filtering -> covariances ->
    (DOA estimation ->) beamforming -> synthesis. Output waveforms match the
    input length.
    """
    cfg = model.cfg
    if mixture.num_channels != cfg.num_mics:
        raise ValueError(f"expected {cfg.num_mics} channels, got {mixture.num_channels}")
    if mixture.sample_rate != 16000:
        raise ValueError(f"expected 16 kHz input, got {mixture.sample_rate}")
    spec = stft(mixture, stft_cfg)
    if spec.num_bins != cfg.num_bins:
        raise ValueError(f"stft yields F={spec.num_bins} but model expects {cfg.num_bins}")
    if cfg.ablation == "no_de_ipd":
        feats = multichannel_magnitude(spec)
    else:
        feats = assemble_features(spec)
    feats_t = Tensor(feats.data)
    crf = model.crf_tensors(feats_t)
    planes = _shifted_planes(spec.data, cfg.crf_context)
    filtered = [_apply_crf_tensors(planes, re, im) for re, im in crf]
    phis = []
    for src in range(2):
        s_re, s_im = filtered[2 * src]
        i_re, i_im = filtered[2 * src + 1]
        phis.append((
            _covariance_tensor(s_re, s_im, model.ln_speech),
            _covariance_tensor(i_re, i_im, model.ln_interf),
        ))
    embeddings = []
    spectra = []
    if cfg.ablation == "full":
        for src in range(2):
            de, ss = model.doa_forward(phis[src][0], phis[src][1], branch=src)
            embeddings.append(de)
            spectra.append(ss)
    else:
        embeddings = [None, None]
    beam_specs = []
    waveforms = []
    weights = []
    yr, yi = _complex_planes(spec.data)
    for src in range(2):
        w_re, w_im = model.beam_forward(phis[src][0], phis[src][1], embeddings[src],
                                        branch=src)
        b_re, b_im = _apply_beamformer_tensors(w_re, w_im, yr, yi)
        beam_specs.append((b_re, b_im))
        waveforms.append(istft_tensor(b_re, b_im, stft_cfg, mixture.num_samples))
        weights.append((w_re, w_im))
    diag = {}
    if diagnostics:
        diag["mixture_spec"] = spec
        diag["covariances"] = [CovariancePair(p[0].data.copy(), p[1].data.copy()) for p in phis]
        if cfg.ablation == "full":
            diag["embeddings"] = [DirectionalEmbedding(d.data.copy()) for d in embeddings]
        diag["weights"] = [BeamWeights(w[0].data + 1j * w[1].data) for w in weights]
        diag["beamformed"] = [ComplexSpectrogram(b[0].data + 1j * b[1].data)
                              for b in beam_specs]
    return ForwardResult(waveforms=waveforms, spectra=spectra, beam_specs=beam_specs,
                         diagnostics=diag)


# -- classical oracle ----------------------------------------------------------

def mvdr_oracle(sources, ref_channel: int = 0) -> list[BeamWeights]:
    """Time-invariant per-frequency MVDR weights from true source images.

    For each source, the speech covariance is the frame-averaged outer
    product of its own image and the interference covariance that of the
    other source. The steering estimate is the principal eigenvector of the
    speech covariance normalized to the reference channel (a relative
    transfer function), and
        w = (Phi_I + delta I)^-1 r / (r^H (Phi_I + delta I)^-1 r)
    with diagonal loading delta = 1e-6 trace / M, which satisfies
    w^H r = 1 exactly (distortionless toward the steering estimate).
    """
    specs = [np.asarray(s.data if isinstance(s, ComplexSpectrogram) else s,
                        dtype=np.complex128) for s in sources]
    if len(specs) != 2:
        raise ValueError("the oracle expects exactly two source spectrograms")
    t, f, m = specs[0].shape
    if not (0 <= ref_channel < m):
        raise ValueError(f"reference channel {ref_channel} out of range")
    covs = []
    for s in specs:
        # (F, M, M) frame-averaged outer products
        covs.append(np.einsum("tfa,tfb->fab", s, np.conj(s), optimize=True) / t)
    out = []
    for src in range(2):
        phi_s = covs[src]
        phi_i = covs[1 - src]
        w = np.zeros((f, m), dtype=np.complex128)
        for k in range(f):
            delta = 1e-6 * np.real(np.trace(phi_i[k])) / m + 1e-12
            loaded = phi_i[k] + delta * np.eye(m)
            vals, vecs = np.linalg.eigh(phi_s[k])
            v = vecs[:, -1]
            if abs(v[ref_channel]) < 1e-12:
                raise NumericalFailure(
                    f"steering estimate vanished at frequency bin {k} (source {src})")
            r = v / v[ref_channel]
            try:
                num = np.linalg.solve(loaded, r)
            except np.linalg.LinAlgError as exc:
                raise NumericalFailure(
                    f"singular interference covariance at frequency bin {k}") from exc
            den = np.real(np.vdot(r, num))
            if den <= 0:
                raise NumericalFailure(
                    f"non-positive MVDR denominator at frequency bin {k}")
            w[k] = num / den
        out.append(BeamWeights(np.broadcast_to(w[None, :, :], (t, f, m)).copy()))
    return out
