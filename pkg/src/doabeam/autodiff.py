"""Reverse-mode automatic differentiation on numpy arrays.

A recorded-tape design: every operation on `Tensor` objects registers a
backward closure, and `Tensor.backward()` walks the tape in reverse
topological order. All values are plain numpy arrays (float64 for training
and gradient checking; float32 works for inference-only forward passes).

Only the primitives the beamforming networks need are provided: elementwise
arithmetic, matmul over the last axis, activations, reductions, shape
surgery (reshape / transpose / slicing / padding / concat), a fused layer
normalization and a fused 2-D convolution.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "as_tensor",
    "concat",
    "stack",
    "relu",
    "sigmoid",
    "tanh",
    "exp",
    "sqrt",
    "pad_last_axes",
    "layer_norm",
    "conv2d",
]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A numpy array plus an optional gradient accumulator and tape hook."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        data = np.asarray(data)
        if data.dtype.kind != "f":
            data = data.astype(np.float64)
        self.data = data
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    # -- autodiff engine ------------------------------------------------
    def backward(self) -> None:
        """Backpropagate from a scalar tensor through the recorded tape."""
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar, got shape {self.data.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        # iterative DFS; GRU tapes are thousands of nodes deep
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited and p.requires_grad:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic -----------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        out_data = self.data + other.data
        req = self.requires_grad or other.requires_grad
        if not req:
            return Tensor(out_data)

        def bwd(gy):
            if self.requires_grad:
                self.accumulate(_unbroadcast(gy, self.data.shape))
            if other.requires_grad:
                other.accumulate(_unbroadcast(gy, other.data.shape))

        return Tensor(out_data, True, (self, other), bwd)

    __radd__ = __add__

    def __neg__(self):
        if not self.requires_grad:
            return Tensor(-self.data)

        def bwd(gy):
            self.accumulate(-gy)

        return Tensor(-self.data, True, (self,), bwd)

    def __sub__(self, other):
        other = as_tensor(other)
        out_data = self.data - other.data
        req = self.requires_grad or other.requires_grad
        if not req:
            return Tensor(out_data)

        def bwd(gy):
            if self.requires_grad:
                self.accumulate(_unbroadcast(gy, self.data.shape))
            if other.requires_grad:
                other.accumulate(_unbroadcast(-gy, other.data.shape))

        return Tensor(out_data, True, (self, other), bwd)

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        out_data = self.data * other.data
        req = self.requires_grad or other.requires_grad
        if not req:
            return Tensor(out_data)

        def bwd(gy):
            if self.requires_grad:
                self.accumulate(_unbroadcast(gy * other.data, self.data.shape))
            if other.requires_grad:
                other.accumulate(_unbroadcast(gy * self.data, other.data.shape))

        return Tensor(out_data, True, (self, other), bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out_data = self.data / other.data
        req = self.requires_grad or other.requires_grad
        if not req:
            return Tensor(out_data)

        def bwd(gy):
            if self.requires_grad:
                self.accumulate(_unbroadcast(gy / other.data, self.data.shape))
            if other.requires_grad:
                other.accumulate(_unbroadcast(-gy * out_data / other.data, other.data.shape))

        return Tensor(out_data, True, (self, other), bwd)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out_data = self.data ** p
        if not self.requires_grad:
            return Tensor(out_data)

        def bwd(gy):
            self.accumulate(gy * p * self.data ** (p - 1))

        return Tensor(out_data, True, (self,), bwd)

    def __matmul__(self, other):
        other = as_tensor(other)
        out_data = self.data @ other.data
        req = self.requires_grad or other.requires_grad
        if not req:
            return Tensor(out_data)
        a, b = self, other

        def bwd(gy):
            if a.requires_grad:
                ga = gy @ np.swapaxes(b.data, -1, -2)
                a.accumulate(_unbroadcast(ga, a.data.shape))
            if b.requires_grad:
                if a.data.ndim == 1:
                    gb = np.outer(a.data, gy)
                elif b.data.ndim == 2 and a.data.ndim > 2:
                    # (..., m, k) @ (k, n): fold batch dims into one GEMM
                    k = a.data.shape[-1]
                    n = gy.shape[-1]
                    gb = a.data.reshape(-1, k).T @ gy.reshape(-1, n)
                else:
                    gb = np.swapaxes(a.data, -1, -2) @ gy
                b.accumulate(_unbroadcast(gb, b.data.shape))

        return Tensor(out_data, True, (a, b), bwd)

    # -- reductions -----------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)
        if not self.requires_grad:
            return Tensor(out_data)
        in_shape = self.data.shape

        def bwd(gy):
            g = np.asarray(gy)
            if axis is not None and not keepdims:
                axes = (axis,) if isinstance(axis, int) else tuple(axis)
                axes = tuple(a % len(in_shape) for a in axes)
                for a in sorted(axes):
                    g = np.expand_dims(g, a)
            self.accumulate(np.broadcast_to(g, in_shape))

        return Tensor(out_data, True, (self,), bwd)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.data.size
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            n = 1
            for a in axes:
                n *= self.data.shape[a]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- shape surgery ----------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out_data = self.data.reshape(shape)
        if not self.requires_grad:
            return Tensor(out_data)
        in_shape = self.data.shape

        def bwd(gy):
            self.accumulate(gy.reshape(in_shape))

        return Tensor(out_data, True, (self,), bwd)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        out_data = self.data.transpose(axes)
        if not self.requires_grad:
            return Tensor(out_data)
        inv = np.argsort(axes)

        def bwd(gy):
            self.accumulate(gy.transpose(inv))

        return Tensor(out_data, True, (self,), bwd)

    def __getitem__(self, idx):
        """Basic (slice/int) indexing; fancy-index reads are not supported."""
        out_data = self.data[idx]
        if not self.requires_grad:
            return Tensor(out_data)

        def bwd(gy):
            # write into the shared grad buffer; reversed-topo order ensures
            # every slice consumer runs before this tensor's own backward
            if self.grad is None:
                self.grad = np.zeros_like(self.data)
            self.grad[idx] += gy

        return Tensor(out_data, True, (self,), bwd)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


# -- elementwise functions -------------------------------------------------

def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, 0.0)
    if not x.requires_grad:
        return Tensor(out_data)

    def bwd(gy):
        x.accumulate(gy * (x.data > 0))

    return Tensor(out_data, True, (x,), bwd)


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    out_data = _stable_sigmoid(x.data)
    if not x.requires_grad:
        return Tensor(out_data)

    def bwd(gy):
        x.accumulate(gy * out_data * (1.0 - out_data))

    return Tensor(out_data, True, (x,), bwd)


def tanh(x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)
    if not x.requires_grad:
        return Tensor(out_data)

    def bwd(gy):
        x.accumulate(gy * (1.0 - out_data * out_data))

    return Tensor(out_data, True, (x,), bwd)


def exp(x: Tensor) -> Tensor:
    out_data = np.exp(x.data)
    if not x.requires_grad:
        return Tensor(out_data)

    def bwd(gy):
        x.accumulate(gy * out_data)

    return Tensor(out_data, True, (x,), bwd)


def sqrt(x: Tensor) -> Tensor:
    out_data = np.sqrt(x.data)
    if not x.requires_grad:
        return Tensor(out_data)

    def bwd(gy):
        x.accumulate(gy * 0.5 / out_data)

    return Tensor(out_data, True, (x,), bwd)


# -- structural ops ---------------------------------------------------------

def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    req = any(t.requires_grad for t in tensors)
    if not req:
        return Tensor(out_data)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(gy):
        pieces = np.split(gy, splits, axis=axis)
        for t, g in zip(tensors, pieces):
            if t.requires_grad:
                t.accumulate(g)

    return Tensor(out_data, True, tuple(tensors), bwd)


def stack(tensors, axis=0) -> Tensor:
    """Stack along a new axis (concat of expanded views)."""
    expanded = []
    for t in tensors:
        t = as_tensor(t)
        expanded.append(t.reshape(t.shape[:axis] + (1,) + t.shape[axis:]))
    return concat(expanded, axis=axis)


def pad_last_axes(x: Tensor, pads) -> Tensor:
    """Zero-pad the trailing axes; `pads` is a list of (before, after) pairs."""
    width = [(0, 0)] * (x.ndim - len(pads)) + list(pads)
    out_data = np.pad(x.data, width)
    if not x.requires_grad:
        return Tensor(out_data)
    sl = tuple(slice(b, b + n) for (b, _), n in zip(width, x.shape))

    def bwd(gy):
        x.accumulate(gy[sl])

    return Tensor(out_data, True, (x,), bwd)


# -- fused layers ------------------------------------------------------------

def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize over the last axis, then apply an elementwise affine."""
    gain = as_tensor(gain)
    bias = as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * gain.data + bias.data
    req = x.requires_grad or gain.requires_grad or bias.requires_grad
    if not req:
        return Tensor(out_data)
    d = x.data.shape[-1]
    lead = tuple(range(x.data.ndim - 1))

    def bwd(gy):
        if gain.requires_grad:
            gain.accumulate((gy * xhat).sum(axis=lead))
        if bias.requires_grad:
            bias.accumulate(gy.sum(axis=lead))
        if x.requires_grad:
            dxhat = gy * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            x.accumulate(inv * (dxhat - m1 - xhat * m2))

    return Tensor(out_data, True, (x, gain, bias), bwd)


def _im2col(x: np.ndarray, kh: int, kw: int, sh: int, sw: int):
    """x: (B, C, H, W) already padded -> cols (B, C*kh*kw, Ho*Wo)."""
    b, c, h, w = x.shape
    ho = (h - kh) // sh + 1
    wo = (w - kw) // sw + 1
    s0, s1, s2, s3 = x.strides
    view = np.lib.stride_tricks.as_strided(
        x,
        shape=(b, c, kh, kw, ho, wo),
        strides=(s0, s1, s2, s3, s2 * sh, s3 * sw),
        writeable=False,
    )
    return view.reshape(b, c * kh * kw, ho * wo), ho, wo


def _col2im(cols: np.ndarray, x_shape, kh, kw, sh, sw, ho, wo) -> np.ndarray:
    b, c, h, w = x_shape
    out = np.zeros(x_shape, dtype=cols.dtype)
    cols = cols.reshape(b, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw] += cols[:, :, i, j]
    return out


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor | None = None,
           stride=1, padding=0) -> Tensor:
    """2-D cross-correlation.

    Args:
        x: (B, C, H, W) input maps.
        kernels: (O, C, kh, kw) filters.
        bias: optional (O,).
        stride, padding: int or (int, int), zeros padding.
    Returns:
        (B, O, Ho, Wo) tensor.
    """
    kernels = as_tensor(kernels)
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    ph, pw = (padding, padding) if isinstance(padding, int) else padding
    if x.ndim != 4 or kernels.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input/kernels, got {x.shape} and {kernels.shape}")
    o, c, kh, kw = kernels.shape
    if c != x.shape[1]:
        raise ValueError(f"channel mismatch: input has {x.shape[1]}, kernels expect {c}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    if kh > xp.shape[2] or kw > xp.shape[3]:
        raise ValueError("kernel does not fit the padded input")
    cols, ho, wo = _im2col(xp, kh, kw, sh, sw)
    k2 = kernels.data.reshape(o, -1)
    out_data = np.einsum("ok,bkp->bop", k2, cols, optimize=True).reshape(-1, o, ho, wo)
    if bias is not None:
        out_data = out_data + bias.data[None, :, None, None]
    req = x.requires_grad or kernels.requires_grad or (bias is not None and bias.requires_grad)
    if not req:
        return Tensor(out_data)
    parents = (x, kernels) if bias is None else (x, kernels, bias)
    xp_shape = xp.shape

    def bwd(gy):
        g2 = gy.reshape(gy.shape[0], o, -1)  # (B, O, Ho*Wo)
        if bias is not None and bias.requires_grad:
            bias.accumulate(gy.sum(axis=(0, 2, 3)))
        if kernels.requires_grad:
            gk = np.einsum("bop,bkp->ok", g2, cols, optimize=True)
            kernels.accumulate(gk.reshape(kernels.data.shape))
        if x.requires_grad:
            gcols = np.einsum("ok,bop->bkp", k2, g2, optimize=True)
            gxp = _col2im(gcols, xp_shape, kh, kw, sh, sw, ho, wo)
            if ph or pw:
                gxp = gxp[:, :, ph : gxp.shape[2] - ph, pw : gxp.shape[3] - pw]
            x.accumulate(gxp)

    return Tensor(out_data, True, parents, bwd)
