"""Minimal reverse-mode autodiff on dense numpy arrays.

Each operation records a backward closure on the output tensor; backward()
builds the tape (reverse topological order over the graph) and walks it once.
Double precision is the default for tests; training code passes float32.
No padding, no general broadcasting beyond what the ops here need.
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (rollout fast path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad back down to `shape` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype) if dtype is not None else np.asarray(data)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) and _GRAD_ENABLED
        self._backward = None
        self._prev = ()

    # ----- graph plumbing -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    @staticmethod
    def _make(data, parents, backward):
        out = Tensor(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._prev = tuple(parents)
            out._backward = backward
        return out

    def backward(self):
        """Backpropagate from a scalar; fills .grad on every requires_grad node."""
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar loss, got shape {self.shape}")
        tape = []
        visited = set()
        stack = [(self, False)]
        while stack:  # iterative topo sort, graphs can be deep
            node, processed = stack.pop()
            if processed:
                tape.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(tape):
            if node._backward is not None:
                node._backward()

    # ----- elementwise arithmetic ----------------------------------------

    @staticmethod
    def _ensure(x, like=None) -> "Tensor":
        if isinstance(x, Tensor):
            return x
        dtype = like.data.dtype if like is not None else None
        return Tensor(np.asarray(x, dtype=dtype))

    def __add__(self, other):
        other = Tensor._ensure(other, self)
        out_data = self.data + other.data

        def backward():
            if self.requires_grad:
                self._accum(_unbroadcast(out.grad, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(out.grad, other.shape))

        out = Tensor._make(out_data, (self, other), backward)
        return out

    __radd__ = __add__

    def __neg__(self):
        def backward():
            if self.requires_grad:
                self._accum(-out.grad)

        out = Tensor._make(-self.data, (self,), backward)
        return out

    def __sub__(self, other):
        return self + (-Tensor._ensure(other, self))

    def __rsub__(self, other):
        return Tensor._ensure(other, self) + (-self)

    def __mul__(self, other):
        other = Tensor._ensure(other, self)
        out_data = self.data * other.data

        def backward():
            if self.requires_grad:
                self._accum(_unbroadcast(out.grad * other.data, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(out.grad * self.data, other.shape))

        out = Tensor._make(out_data, (self, other), backward)
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._ensure(other, self)
        out_data = self.data / other.data

        def backward():
            if self.requires_grad:
                self._accum(_unbroadcast(out.grad / other.data, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(-out.grad * self.data / (other.data ** 2), other.shape))

        out = Tensor._make(out_data, (self, other), backward)
        return out

    def __rtruediv__(self, other):
        return Tensor._ensure(other, self) / self

    def __pow__(self, p):
        assert isinstance(p, (int, float)), "only scalar exponents"
        out_data = self.data ** p

        def backward():
            if self.requires_grad:
                self._accum(out.grad * p * self.data ** (p - 1))

        out = Tensor._make(out_data, (self,), backward)
        return out

    def exp(self):
        out_data = np.exp(self.data)

        def backward():
            if self.requires_grad:
                self._accum(out.grad * out_data)

        out = Tensor._make(out_data, (self,), backward)
        return out

    def log(self):
        out_data = np.log(self.data)

        def backward():
            if self.requires_grad:
                self._accum(out.grad / self.data)

        out = Tensor._make(out_data, (self,), backward)
        return out

    def clamp(self, lo: float, hi: float):
        out_data = np.clip(self.data, lo, hi)

        def backward():
            if self.requires_grad:
                inside = (self.data >= lo) & (self.data <= hi)
                self._accum(out.grad * inside)

        out = Tensor._make(out_data, (self,), backward)
        return out

    # ----- reductions / shape ---------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward():
            if self.requires_grad:
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self._accum(np.broadcast_to(g, self.shape).copy())

        out = Tensor._make(out_data, (self,), backward)
        return out

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / float(n)

    def reshape(self, *shape):
        out_data = self.data.reshape(*shape)

        def backward():
            if self.requires_grad:
                self._accum(out.grad.reshape(self.shape))

        out = Tensor._make(out_data, (self,), backward)
        return out

    def __getitem__(self, key):
        out_data = self.data[key]

        def backward():
            if self.requires_grad:
                g = np.zeros_like(self.data)
                np.add.at(g, key, out.grad)
                self._accum(g)

        out = Tensor._make(out_data, (self,), backward)
        return out

    def gather(self, index: np.ndarray):
        """Pick one entry per row: out[i] = self[i, index[i]] for a 2-D tensor."""
        rows = np.arange(self.data.shape[0])
        index = np.asarray(index)
        out_data = self.data[rows, index]

        def backward():
            if self.requires_grad:
                g = np.zeros_like(self.data)
                np.add.at(g, (rows, index), out.grad)
                self._accum(g)

        out = Tensor._make(out_data, (self,), backward)
        return out

    def __matmul__(self, other):
        other = Tensor._ensure(other, self)
        out_data = self.data @ other.data

        def backward():
            if self.requires_grad:
                self._accum(out.grad @ other.data.T)
            if other.requires_grad:
                other._accum(self.data.T @ out.grad)

        out = Tensor._make(out_data, (self, other), backward)
        return out

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


# ----- elementwise pair ops ------------------------------------------------


def minimum(a: Tensor, b: Tensor) -> Tensor:
    a, b = Tensor._ensure(a), Tensor._ensure(b)
    out_data = np.minimum(a.data, b.data)

    def backward():
        take_a = a.data <= b.data
        if a.requires_grad:
            a._accum(_unbroadcast(out.grad * take_a, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(out.grad * ~take_a, b.shape))

    out = Tensor._make(out_data, (a, b), backward)
    return out


def maximum(a: Tensor, b: Tensor) -> Tensor:
    a, b = Tensor._ensure(a), Tensor._ensure(b)
    out_data = np.maximum(a.data, b.data)

    def backward():
        take_a = a.data >= b.data
        if a.requires_grad:
            a._accum(_unbroadcast(out.grad * take_a, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(out.grad * ~take_a, b.shape))

    out = Tensor._make(out_data, (a, b), backward)
    return out


def relu(x: Tensor) -> Tensor:
    x = Tensor._ensure(x)
    out_data = np.maximum(x.data, 0)

    def backward():
        if x.requires_grad:
            x._accum(out.grad * (x.data > 0))

    out = Tensor._make(out_data, (x,), backward)
    return out


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map x @ weight + bias; weight shape (in, out)."""
    out = x @ weight
    if bias is not None:
        out = out + bias
    return out


# ----- convolution ----------------------------------------------------------


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int):
    b, h, w, cin = x.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    cols = np.empty((b, ho, wo, kh * kw * cin), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = x[:, i : i + ho * stride : stride, j : j + wo * stride : stride, :]
            cols[:, :, :, (i * kw + j) * cin : (i * kw + j + 1) * cin] = patch
    return cols, ho, wo


def conv2d(x: Tensor, filters: Tensor, stride: int = 1) -> Tensor:
    """Valid (unpadded) 2-D convolution on NHWC input.

    filters shape (kh, kw, c_in, c_out); output spatial dim floor((in-k)/stride)+1.
    """
    x, filters = Tensor._ensure(x), Tensor._ensure(filters)
    single = x.data.ndim == 3
    xd = x.data[None] if single else x.data
    kh, kw, cin, cout = filters.shape
    if xd.shape[1] < kh or xd.shape[2] < kw or xd.shape[3] != cin:
        raise ValueError(f"conv2d shape mismatch: input {x.shape}, filters {filters.shape}")
    cols, ho, wo = _im2col(xd, kh, kw, stride)
    wmat = filters.data.reshape(kh * kw * cin, cout)
    out_data = cols.reshape(-1, kh * kw * cin) @ wmat
    out_data = out_data.reshape(xd.shape[0], ho, wo, cout)
    if single:
        out_data = out_data[0]

    def backward():
        g = out.grad[None] if single else out.grad
        gmat = g.reshape(-1, cout)
        if filters.requires_grad:
            dw = cols.reshape(-1, kh * kw * cin).T @ gmat
            filters._accum(dw.reshape(filters.shape))
        if x.requires_grad:
            dcols = (gmat @ wmat.T).reshape(xd.shape[0], ho, wo, kh * kw * cin)
            dx = np.zeros_like(xd)
            for i in range(kh):
                for j in range(kw):
                    dx[:, i : i + ho * stride : stride, j : j + wo * stride : stride, :] += dcols[
                        :, :, :, (i * kw + j) * cin : (i * kw + j + 1) * cin
                    ]
            x._accum(dx[0] if single else dx)

    out = Tensor._make(out_data, (x, filters), backward)
    return out


# ----- initialization / optimizer / clipping --------------------------------


def orthogonal_init(shape, gain: float = 1.0, rng: np.random.Generator | None = None,
                    dtype=np.float64) -> Tensor:
    """Orthogonal init: QR of a standard normal matrix with sign correction.

    Non-2D shapes are treated as (prod(shape[:-1]), shape[-1]).
    """
    rng = rng if rng is not None else np.random.default_rng()
    shape = tuple(shape)
    rows = int(np.prod(shape[:-1]))
    cols = shape[-1]
    flat = (rows, cols)
    a = rng.standard_normal(flat if rows >= cols else flat[::-1])
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))  # make the decomposition unique
    if rows < cols:
        q = q.T
    # C-contiguous so a checkpoint round-trip reproduces the exact BLAS path
    return Tensor(np.ascontiguousarray((gain * q).reshape(shape), dtype=dtype),
                  requires_grad=True)


@dataclass
class AdamState:
    """Per-parameter moment estimates plus the shared hyperparameters."""

    lr: float = 2.5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-5
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **kw) -> "AdamState":
        st = cls(**kw)
        st.m = [np.zeros_like(p.data) for p in params]
        st.v = [np.zeros_like(p.data) for p in params]
        return st


def adam_step(params, grads, state: AdamState, lr: float | None = None):
    """Standard Adam update, in place on the params' arrays.

    The effective learning rate may be supplied per call (annealing lives in
    the caller); falls back to state.lr.
    """
    lr = state.lr if lr is None else lr
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g)
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p.data -= (lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.data.dtype, copy=False)
    return params


def global_grad_clip(grads, threshold: float):
    """Scale all gradients so the concatenated l2 norm does not exceed threshold."""
    total = np.sqrt(sum(float((np.asarray(g) ** 2).sum()) for g in grads))
    if total > threshold:
        scale = threshold / total
        return [np.asarray(g) * scale for g in grads]
    return list(grads)


def zero_grads(params):
    for p in params:
        p.grad = None


# ----- checkpoint format -----------------------------------------------------
# JSON header line naming tensors and shapes, then the flat little-endian
# float32 payload in header order.


def save_checkpoint(path, tensors: dict):
    names = list(tensors.keys())
    header = {
        "format": "guidedrts-checkpoint",
        "version": 1,
        "tensors": [{"name": n, "shape": list(np.asarray(_data(tensors[n])).shape)} for n in names],
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode("utf-8") + b"\n")
        for n in names:
            f.write(np.asarray(_data(tensors[n]), dtype="<f4").tobytes())


def load_checkpoint(path) -> dict:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        if header.get("format") != "guidedrts-checkpoint":
            raise ValueError(f"{path}: not a checkpoint file")
        out = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(count * 4)
            out[entry["name"]] = np.frombuffer(buf, dtype="<f4").reshape(shape).copy()
    return out


def _data(x):
    return x.data if isinstance(x, Tensor) else x
