"""Minimal dense-tensor engine with reverse-mode differentiation.

Tensors wrap numpy arrays (float32 by default; ops preserve dtype so test
oracles can run the same graph in float64). Each op records its parents and
a backward closure; `backward()` on a scalar loss topologically sorts the
recorded graph and accumulates gradients into every `requires_grad` tensor.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np


class ShapeError(ValueError):
    pass


_state = threading.local()
_DEBUG_CHECKS = False


def set_debug_checks(enabled: bool) -> None:
    """When enabled, every forward op asserts its output is finite."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = enabled


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    prev = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() requires a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar; populates .grad on reachable tensors."""
        if self.size != 1:
            raise ShapeError(f"backward requires a scalar, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple, backward_fn) -> Tensor:
    if _DEBUG_CHECKS and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values produced by a forward op")
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape).astype(a.dtype, copy=False))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.shape).astype(b.dtype, copy=False))

    return _make(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape).astype(a.dtype, copy=False))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g, b.shape).astype(b.dtype, copy=False))

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.shape).astype(a.dtype, copy=False))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.shape).astype(b.dtype, copy=False))

    return _make(data, (a, b), backward)


def scale(x, s: float) -> Tensor:
    x = _as_tensor(x)
    data = x.data * x.dtype.type(s)

    def backward(g):
        x.accumulate_grad(g * x.dtype.type(s))

    return _make(data, (x,), backward)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    data = np.maximum(x.data, 0)

    def backward(g):
        x.accumulate_grad(g * (x.data > 0))

    return _make(data, (x,), backward)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    data = x.data.reshape(shape)

    def backward(g):
        x.accumulate_grad(g.reshape(x.shape))

    return _make(data, (x,), backward)


def concat(tensors: list, axis: int) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.accumulate_grad(g[tuple(idx)])

    return _make(data, tuple(ts), backward)


def gather(x, indices, axis: int = 0) -> Tensor:
    """Select rows (axis 0 only) by integer index; duplicates allowed."""
    if axis != 0:
        raise NotImplementedError("gather supports axis 0")
    x = _as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise IndexError(f"gather index out of range for {x.shape[0]} rows")
    data = x.data[idx]

    def backward(g):
        dx = np.zeros_like(x.data)
        np.add.at(dx, idx, g)
        x.accumulate_grad(dx)

    return _make(data, (x,), backward)


def reduce_sum(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            x.accumulate_grad(np.broadcast_to(g, x.shape).astype(x.dtype, copy=False))
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            x.accumulate_grad(np.broadcast_to(ge, x.shape).astype(x.dtype, copy=False))

    return _make(data, (x,), backward)


def reduce_max(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """Max along one axis (or all); gradient routes to the first maximizer."""
    x = _as_tensor(x)
    data = x.data.max(axis=axis, keepdims=keepdims)

    def backward(g):
        dx = np.zeros_like(x.data)
        if axis is None:
            flat_idx = int(np.argmax(x.data))
            dx.reshape(-1)[flat_idx] = g
        else:
            am = np.expand_dims(np.argmax(x.data, axis=axis), axis)
            ge = g if keepdims else np.expand_dims(g, axis)
            np.put_along_axis(dx, am, np.take_along_axis(dx, am, axis) + ge, axis)
        x.accumulate_grad(dx)

    return _make(data, (x,), backward)


# ---------------------------------------------------------------------------
# linear algebra and convolution


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad((g @ b.data.T).astype(a.dtype, copy=False))
        if b.requires_grad:
            b.accumulate_grad((a.data.T @ g).astype(b.dtype, copy=False))

    return _make(data, (a, b), backward)


def linear(x, w, b=None) -> Tensor:
    """Affine map of row vectors: x @ w (+ b)."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: incompatible shapes {x.shape} and {w.shape}")
    data = x.data @ w.data
    if b is not None:
        b = _as_tensor(b)
        data = data + b.data

    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad((g @ w.data.T).astype(x.dtype, copy=False))
        if w.requires_grad:
            w.accumulate_grad((x.data.T @ g).astype(w.dtype, copy=False))
        if b is not None and b.requires_grad:
            b.accumulate_grad(g.sum(axis=0))

    return _make(data, parents, backward)


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(0, 1))
    windows = windows[::stride, ::stride]  # Ho x Wo x C x kh x kw
    ho, wo = windows.shape[:2]
    cols = windows.transpose(0, 1, 3, 4, 2).reshape(ho * wo, kh * kw * xp.shape[2])
    return np.ascontiguousarray(cols)


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2D convolution on an HWC image with a (kh, kw, cin, cout) kernel."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: expected HWC input and (kh,kw,cin,cout) kernel, got {x.shape} and {w.shape}")
    kh, kw, cin, cout = w.shape
    if x.shape[2] != cin:
        raise ShapeError(f"conv2d: input channels {x.shape[2]} != kernel channels {cin}")
    h, wd = x.shape[:2]
    if h + 2 * padding < kh or wd + 2 * padding < kw:
        raise ShapeError(f"conv2d: input {x.shape} too small for kernel {w.shape} with padding {padding}")

    xp = np.pad(x.data, ((padding, padding), (padding, padding), (0, 0))) if padding else x.data
    cols = _im2col(xp, kh, kw, stride)
    wmat = w.data.reshape(kh * kw * cin, cout)
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = cols @ wmat
    if b is not None:
        b = _as_tensor(b)
        out = out + b.data
    data = out.reshape(ho, wo, cout)

    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gmat = g.reshape(ho * wo, cout)
        if w.requires_grad:
            w.accumulate_grad((cols.T @ gmat).reshape(w.shape).astype(w.dtype, copy=False))
        if b is not None and b.requires_grad:
            b.accumulate_grad(gmat.sum(axis=0))
        if x.requires_grad:
            dcols = (gmat @ wmat.T).reshape(ho, wo, kh, kw, cin)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[i : i + ho * stride : stride, j : j + wo * stride : stride, :] += dcols[:, :, i, j, :]
            if padding:
                dxp = dxp[padding:-padding, padding:-padding, :]
            x.accumulate_grad(dxp.astype(x.dtype, copy=False))

    return _make(data, parents, backward)


def max_pool2d(x, kernel: int, stride: int | None = None) -> Tensor:
    """Max pooling over an HWC image; gradient routes to the window argmax."""
    x = _as_tensor(x)
    if x.data.ndim != 3:
        raise ShapeError(f"max_pool2d: expected HWC input, got {x.shape}")
    stride = stride or kernel
    h, w, c = x.shape
    if h < kernel or w < kernel:
        raise ShapeError(f"max_pool2d: input {x.shape} smaller than kernel {kernel}")
    windows = np.lib.stride_tricks.sliding_window_view(x.data, (kernel, kernel), axis=(0, 1))
    windows = windows[::stride, ::stride]  # ho x wo x c x k x k
    ho, wo = windows.shape[:2]
    flat = windows.reshape(ho, wo, c, kernel * kernel)
    am = np.argmax(flat, axis=3)
    data = np.take_along_axis(flat, am[..., None], axis=3)[..., 0]

    def backward(g):
        dx = np.zeros_like(x.data)
        ph, pw = np.divmod(am, kernel)
        ii, jj, cc = np.meshgrid(np.arange(ho), np.arange(wo), np.arange(c), indexing="ij")
        rows = (ii * stride + ph).ravel()
        colm = (jj * stride + pw).ravel()
        np.add.at(dx, (rows, colm, cc.ravel()), g.ravel())
        x.accumulate_grad(dx)

    return _make(data, (x,), backward)


def bilinear_crop(fmap, boxes: np.ndarray, out_size: int) -> Tensor:
    """Crop-resize box regions of an HWC map to out_size x out_size via
    bilinear sampling with border clamping.

    Boxes are (n, 4) [x0, y0, x1, y1] in continuous feature coordinates
    where integer positions are cell centers. Sampling is endpoint-inclusive
    (first sample at x0, last at x1; midpoint when out_size is 1), so a
    degenerate box reads a single location and a box over cells 0..W-1 with
    out_size W reproduces the map. Boxes are data, not differentiated.
    """
    fmap = _as_tensor(fmap)
    if fmap.data.ndim != 3:
        raise ShapeError(f"bilinear_crop: expected HWC input, got {fmap.shape}")
    boxes = np.asarray(boxes, dtype=np.float64)
    h, w, c = fmap.shape
    n = len(boxes)
    p = out_size
    steps = np.full(1, 0.5) if p == 1 else np.arange(p) / (p - 1)
    sx = boxes[:, 0, None] + steps[None, :] * (boxes[:, 2] - boxes[:, 0])[:, None]  # n x p
    sy = boxes[:, 1, None] + steps[None, :] * (boxes[:, 3] - boxes[:, 1])[:, None]

    def split(coords, limit):
        c0 = np.clip(np.floor(coords).astype(np.int64), 0, max(limit - 2, 0))
        c1 = np.minimum(c0 + 1, limit - 1)
        frac = np.clip(coords - c0, 0.0, 1.0)
        return c0, c1, frac

    x0, x1, fx = split(sx, w)
    y0, y1, fy = split(sy, h)

    # broadcast to n x p(y) x p(x)
    y0b, y1b, fyb = y0[:, :, None], y1[:, :, None], fy[:, :, None]
    x0b, x1b, fxb = x0[:, None, :], x1[:, None, :], fx[:, None, :]
    fm = fmap.data
    w00 = ((1 - fyb) * (1 - fxb)).astype(fm.dtype)
    w01 = ((1 - fyb) * fxb).astype(fm.dtype)
    w10 = (fyb * (1 - fxb)).astype(fm.dtype)
    w11 = (fyb * fxb).astype(fm.dtype)
    data = (
        fm[y0b, x0b] * w00[..., None]
        + fm[y0b, x1b] * w01[..., None]
        + fm[y1b, x0b] * w10[..., None]
        + fm[y1b, x1b] * w11[..., None]
    )

    def backward(g):
        dfm = np.zeros_like(fm)
        yy0 = np.broadcast_to(y0b, (n, p, p)).ravel()
        yy1 = np.broadcast_to(y1b, (n, p, p)).ravel()
        xx0 = np.broadcast_to(x0b, (n, p, p)).ravel()
        xx1 = np.broadcast_to(x1b, (n, p, p)).ravel()
        gflat = g.reshape(n * p * p, c)
        np.add.at(dfm, (yy0, xx0), gflat * w00.reshape(-1, 1))
        np.add.at(dfm, (yy0, xx1), gflat * w01.reshape(-1, 1))
        np.add.at(dfm, (yy1, xx0), gflat * w10.reshape(-1, 1))
        np.add.at(dfm, (yy1, xx1), gflat * w11.reshape(-1, 1))
        fmap.accumulate_grad(dfm)

    return _make(data, (fmap,), backward)


# ---------------------------------------------------------------------------
# losses


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Sum over rows of cross-entropy between row softmax and integer labels."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"softmax_cross_entropy: got logits {logits.shape}, labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise IndexError(f"label out of range for {logits.shape[1]} classes")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    zs = z - zmax
    lse = np.log(np.exp(zs).sum(axis=1)) + zmax[:, 0]
    picked = z[np.arange(len(labels)), labels]
    data = np.asarray((lse - picked).sum(), dtype=z.dtype)

    def backward(g):
        soft = np.exp(zs)
        soft /= soft.sum(axis=1, keepdims=True)
        soft[np.arange(len(labels)), labels] -= 1.0
        logits.accumulate_grad((soft * g).astype(logits.dtype, copy=False))

    return _make(data, (logits,), backward)


def binary_cross_entropy(logits, targets) -> Tensor:
    """Sum of stable BCE-with-logits terms against float targets in [0, 1]."""
    logits = _as_tensor(logits)
    t = np.asarray(targets, dtype=logits.dtype)
    if t.shape != logits.shape:
        raise ShapeError(f"binary_cross_entropy: got logits {logits.shape}, targets {t.shape}")
    z = logits.data
    data = np.asarray((np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))).sum(), dtype=z.dtype)

    def backward(g):
        sig = 1.0 / (1.0 + np.exp(-z))
        logits.accumulate_grad(((sig - t) * g).astype(logits.dtype, copy=False))

    return _make(data, (logits,), backward)


def smooth_l1(pred, target, beta: float = 1.0) -> Tensor:
    """Sum of Huber-style terms: 0.5 d^2 / beta inside |d| < beta, |d| - beta/2 outside."""
    pred = _as_tensor(pred)
    t = np.asarray(target, dtype=pred.dtype)
    if t.shape != pred.shape:
        raise ShapeError(f"smooth_l1: got pred {pred.shape}, target {t.shape}")
    if beta <= 0:
        raise ValueError("beta must be positive")
    d = pred.data - t
    ad = np.abs(d)
    per = np.where(ad < beta, 0.5 * d * d / beta, ad - 0.5 * beta)
    data = np.asarray(per.sum(), dtype=pred.dtype)

    def backward(g):
        local = np.where(ad < beta, d / beta, np.sign(d))
        pred.accumulate_grad((local * g).astype(pred.dtype, copy=False))

    return _make(data, (pred,), backward)


# ---------------------------------------------------------------------------
# optimizer


class SGD:
    """SGD with classical momentum and decoupled-from-nothing weight decay:
    v <- momentum * v + grad + wd * param; param <- param - lr * v."""

    def __init__(self, params: dict[str, Tensor], lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
        self.params = dict(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.velocity = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                raise ValueError(f"missing grad for parameter {name!r}")
            v = self.velocity[name]
            v *= self.momentum
            v += p.grad
            if self.weight_decay:
                v += self.weight_decay * p.data
            p.data -= np.asarray(self.lr * v, dtype=p.data.dtype)
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
