"""Network building blocks over the autodiff layer.

Provides named parameters, the layer primitives the beamforming models are
assembled from (affine, stacked uni-directional GRU, layer norm, conv2d),
the Adam optimizer with warm-up and global gradient clipping, a
finite-difference gradient checker, and a flat binary checkpoint container.

Checkpoint layout (`save_checkpoint` / `load_checkpoint`):
    line 1:            b"DOABEAM-CKPT-1\n"
    one line per parameter: "<name>\t<dim0,dim1,...>\t<byte offset>\n"
    blank line, then the concatenated little-endian float64 arrays.
Offsets are relative to the first data byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, concat, sigmoid, stack, tanh

__all__ = [
    "Parameter",
    "uniform_init",
    "Linear",
    "fc_forward",
    "GRULayerParams",
    "GRU",
    "gru_forward",
    "LayerNorm",
    "Conv2d",
    "OptimState",
    "adam_step",
    "clip_grad_norm",
    "grad_check",
    "save_checkpoint",
    "load_checkpoint",
]


class Parameter(Tensor):
    """A trainable named tensor; names must be unique within a model."""

    __slots__ = ("name", "trainable")

    def __init__(self, data, name: str, trainable: bool = True):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=trainable)
        self.name = name
        self.trainable = trainable

    def zero_grad(self):
        self.grad = None


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases are zeros elsewhere."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear:
    def __init__(self, din: int, dout: int, rng: np.random.Generator, name: str):
        self.W = Parameter(uniform_init(rng, (din, dout), din), f"{name}.W")
        self.b = Parameter(np.zeros(dout), f"{name}.b")

    def __call__(self, x: Tensor) -> Tensor:
        return fc_forward(x, self.W, self.b)

    def params(self) -> list[Parameter]:
        return [self.W, self.b]


def fc_forward(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """Affine map along the last axis: x @ W + b."""
    if x.shape[-1] != W.shape[0]:
        raise ValueError(f"fc_forward: input width {x.shape[-1]} != W rows {W.shape[0]}")
    if W.shape[1] != b.shape[0]:
        raise ValueError(f"fc_forward: W cols {W.shape[1]} != bias size {b.shape[0]}")
    return x @ W + b


@dataclass
class GRULayerParams:
    """One GRU layer; gate order along the fused axis is (reset, update, candidate)."""

    w_x: Parameter  # (Din, 3H)
    w_h: Parameter  # (H, 3H)
    b_x: Parameter  # (3H,)
    b_h: Parameter  # (3H,)

    def params(self) -> list[Parameter]:
        return [self.w_x, self.w_h, self.b_x, self.b_h]


class GRU:
    """Stacked uni-directional GRU applied over the leading (time) axis."""

    def __init__(self, din: int, hidden: int, layers: int, rng: np.random.Generator, name: str):
        self.hidden = hidden
        self.layers = []
        d = din
        for i in range(layers):
            self.layers.append(
                GRULayerParams(
                    w_x=Parameter(uniform_init(rng, (d, 3 * hidden), d), f"{name}.l{i}.w_x"),
                    w_h=Parameter(uniform_init(rng, (hidden, 3 * hidden), hidden), f"{name}.l{i}.w_h"),
                    b_x=Parameter(np.zeros(3 * hidden), f"{name}.l{i}.b_x"),
                    b_h=Parameter(np.zeros(3 * hidden), f"{name}.l{i}.b_h"),
                )
            )
            d = hidden
        self.name = name

    def __call__(self, x: Tensor, h0: Tensor | None = None) -> Tensor:
        return gru_forward(x, self.layers, h0)

    def params(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.params()]


def gru_forward(x: Tensor, layers, h0: Tensor | None = None) -> Tensor:
    """Run stacked GRU layers over a (T, ..., Din) sequence.

    Causal: the output at frame t depends only on x[0..t]. Layers stack
    output-to-input. Gates: r = sigmoid(..), z = sigmoid(..),
    n = tanh(gi_n + r * gh_n), h' = (1 - z) * n + z * h.

    Args:
        x: (T, ..., Din) tensor; inner axes are batch-like.
        layers: sequence of GRULayerParams.
        h0: optional (..., H) initial state shared by all layers.
    Returns:
        (T, ..., H) hidden-state sequence of the last layer.
    """
    if isinstance(layers, GRU):
        layers = layers.layers
    seq = x
    t_steps = x.shape[0]
    for lp in layers:
        hidden = lp.w_h.shape[0]
        # input projection for every step in one matmul
        gi = seq @ lp.w_x + lp.b_x
        if h0 is not None:
            h = h0
        else:
            h = Tensor(np.zeros(seq.shape[1:-1] + (hidden,)))
        outs = []
        for t in range(t_steps):
            gi_t = gi[t]
            gh = h @ lp.w_h + lp.b_h
            rz = sigmoid(gi_t[..., : 2 * hidden] + gh[..., : 2 * hidden])
            r = rz[..., :hidden]
            z = rz[..., hidden:]
            n = tanh(gi_t[..., 2 * hidden :] + r * gh[..., 2 * hidden :])
            h = n + z * (h - n)
            outs.append(h)
        seq = stack(outs, axis=0)
    return seq


class LayerNorm:
    def __init__(self, dim: int, name: str, eps: float = 1e-5):
        self.gain = Parameter(np.ones(dim), f"{name}.gain")
        self.bias = Parameter(np.zeros(dim), f"{name}.bias")
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        from .autodiff import layer_norm

        return layer_norm(x, self.gain, self.bias, self.eps)

    def params(self) -> list[Parameter]:
        return [self.gain, self.bias]


class Conv2d:
    def __init__(self, cin: int, cout: int, kh: int, kw: int, rng: np.random.Generator,
                 name: str, stride=1, padding=0):
        fan_in = cin * kh * kw
        self.k = Parameter(uniform_init(rng, (cout, cin, kh, kw), fan_in), f"{name}.k")
        self.b = Parameter(np.zeros(cout), f"{name}.b")
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        from .autodiff import conv2d

        return conv2d(x, self.k, self.b, stride=self.stride, padding=self.padding)

    def params(self) -> list[Parameter]:
        return [self.k, self.b]


# -- optimizer ----------------------------------------------------------------

@dataclass
class OptimState:
    """Adam accumulators plus the warm-up learning-rate schedule.

    The effective learning rate ramps linearly from lr/warmup_steps to lr
    across the first `warmup_steps` optimizer steps (the warm-up epoch),
    then stays constant.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup_steps: int = 0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def effective_lr(self) -> float:
        if self.warmup_steps > 0 and self.step < self.warmup_steps:
            return self.lr * (self.step + 1) / self.warmup_steps
        return self.lr


def adam_step(params, grads, state: OptimState) -> None:
    """Bias-corrected Adam update, in place on `params`.

    Args:
        params: list of Parameter.
        grads: parallel list of numpy gradients.
        state: accumulators; step counter advances even for zero gradients.
    """
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("adam_step: non-finite gradient")
    lr = state.effective_lr()
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for p, g in zip(params, grads):
        if p.name not in state.m:
            state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        m = state.m[p.name]
        v = state.v[p.name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        p.data -= lr * mhat / (np.sqrt(vhat) + state.eps)


def clip_grad_norm(grads, max_norm: float = 3.0):
    """Scale all gradients so their global L2 norm is at most max_norm.

    Returns:
        (clipped gradients, pre-clip global norm)
    """
    sq = 0.0
    for g in grads:
        sq += float(np.sum(g * g))
    norm = np.sqrt(sq)
    if norm > max_norm:
        scale = max_norm / norm
        grads = [g * scale for g in grads]
    return grads, norm


# -- gradient checking --------------------------------------------------------

def grad_check(f, params, eps: float = 1e-5, max_coords_per_param: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Compare reverse-mode gradients of a scalar loss against central differences.

    Args:
        f: zero-argument callable returning a scalar Tensor; must close over
           `params` so perturbing their data changes the result.
        params: tensors to check (requires_grad must be set).
        eps: central-difference step.
        max_coords_per_param: if set, check a random coordinate subset of each
           parameter instead of every coordinate (for large models).
        rng: source of the coordinate subsample.
    Returns:
        worst relative error max|analytic - numeric| / max(|a|, |n|, 1).
    """
    for p in params:
        p.grad = None
    out = f()
    if out.size != 1:
        raise ValueError("grad_check requires a scalar-valued function")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        n_coords = flat.size
        if max_coords_per_param is not None and n_coords > max_coords_per_param:
            idx = rng.choice(n_coords, size=max_coords_per_param, replace=False)
        else:
            idx = range(n_coords)
        a_flat = a.reshape(-1)
        for i in idx:
            keep = flat[i]
            flat[i] = keep + eps
            up = float(f().data)
            flat[i] = keep - eps
            down = float(f().data)
            flat[i] = keep
            numeric = (up - down) / (2 * eps)
            denom = max(abs(a_flat[i]), abs(numeric), 1.0)
            worst = max(worst, abs(a_flat[i] - numeric) / denom)
    return worst


# -- checkpoints --------------------------------------------------------------

_CKPT_MAGIC = b"DOABEAM-CKPT-1\n"


def save_checkpoint(path, params) -> None:
    """Write named float64 arrays to the flat binary container format."""
    if isinstance(params, dict):
        items = list(params.items())
    else:
        items = [(p.name, p.data) for p in params]
    names = [n for n, _ in items]
    if len(set(names)) != len(names):
        raise ValueError("duplicate parameter names in checkpoint")
    header = [_CKPT_MAGIC.decode()]
    offset = 0
    blobs = []
    for name, arr in items:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        shape = ",".join(str(d) for d in arr.shape) if arr.ndim else ""
        header.append(f"{name}\t{shape}\t{offset}\n")
        blobs.append(arr.tobytes())
        offset += len(blobs[-1])
    with open(path, "wb") as fh:
        fh.write("".join(header).encode())
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a checkpoint container back into {name: float64 array}."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(_CKPT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    head_end = raw.index(b"\n\n", len(_CKPT_MAGIC) - 1)
    header = raw[len(_CKPT_MAGIC) : head_end].decode()
    data = raw[head_end + 2 :]
    out: dict[str, np.ndarray] = {}
    for line in header.splitlines():
        if not line:
            continue
        name, shape_s, off_s = line.split("\t")
        shape = tuple(int(d) for d in shape_s.split(",")) if shape_s else ()
        count = int(np.prod(shape)) if shape else 1
        off = int(off_s)
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape)
        out[name] = arr.astype(np.float64)
    return out
