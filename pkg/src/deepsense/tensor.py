"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation builds a node on a dynamic tape: the output remembers its parents
and a closure that, given the gradient of the output, accumulates gradients into
the parents. ``Tensor.backward`` walks the tape in reverse topological order.

Shapes must match exactly for binary operations; the only implicit broadcast is
against a scalar (a Python number or a 0-d tensor). Per-feature broadcasting is
spelled out with dedicated ops (``add_bias``, ``batch_norm``, ``conv2d``).
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op", "_done")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = ""
        self._done = False

    @classmethod
    def _make(cls, data: np.ndarray, parents: Sequence["Tensor"], op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out._op = op
        out._done = False
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = tuple(parents) if out.requires_grad else ()
        out._backward = None
        return out

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")

    def __repr__(self) -> str:
        tag = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # -- autodiff ------------------------------------------------------
    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate d(self)/d(node) into ``.grad`` of every node that requires it.

        ``self`` must hold a single element. A tape can be walked once; the closures
        are released afterwards, so a second call on the same loss raises. Only
        leaves (tensors created directly, e.g. parameters) keep their gradient;
        intermediate results drop theirs once propagated.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        if self._done:
            raise RuntimeError("backward() already ran on this graph; rebuild it with a new forward pass")
        if not self.requires_grad:
            raise RuntimeError("loss does not depend on any tensor that requires gradients")
        order = _topological(self)
        self.grad = np.ones_like(self.data) if self.grad is None else self.grad + 1.0
        for node in reversed(order):
            fn = node._backward
            if fn is not None and node.grad is not None:
                fn(node.grad)
            # release saved activations and intermediate gradients as soon as they are consumed
            if node._parents:
                node.grad = None
            node._backward = None
            node._parents = ()
        self._done = True

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None):
        return reduce("sum", self, axis)

    def mean(self, axis=None):
        return reduce("mean", self, axis)

    def relu(self):
        return elementwise("relu", self)

    def sigmoid(self):
        return elementwise("sigmoid", self)

    def tanh(self):
        return elementwise("tanh", self)


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _acc(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True).reshape(t.shape)
    else:
        t.grad += g


def _acc_at(t: Tensor, idx, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad[idx] += g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(x, requires_grad=False)


def parameter(x, name: str | None = None) -> Tensor:
    return Tensor(x, requires_grad=True, name=name)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def _binary_operands(a, b, op: str) -> tuple[Tensor, Tensor]:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and not (a.ndim == 0 or b.ndim == 0):
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape} (only scalar broadcasting is supported)")
    return a, b


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    return np.asarray(g.sum()) if t.ndim == 0 and g.ndim > 0 else g


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "add")
    out = Tensor._make(a.data + b.data, (a, b), "add")
    if out.requires_grad:
        def _bw(g):
            _acc(a, _reduce_to(g, a))
            _acc(b, _reduce_to(g, b))
        out._backward = _bw
    return out


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "sub")
    out = Tensor._make(a.data - b.data, (a, b), "sub")
    if out.requires_grad:
        def _bw(g):
            _acc(a, _reduce_to(g, a))
            _acc(b, _reduce_to(-g, b))
        out._backward = _bw
    return out


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "mul")
    out = Tensor._make(a.data * b.data, (a, b), "mul")
    if out.requires_grad:
        def _bw(g):
            if a.requires_grad:
                _acc(a, _reduce_to(g * b.data, a))
            if b.requires_grad:
                _acc(b, _reduce_to(g * a.data, b))
        out._backward = _bw
    return out


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "div")
    out = Tensor._make(a.data / b.data, (a, b), "div")
    if out.requires_grad:
        def _bw(g):
            if a.requires_grad:
                _acc(a, _reduce_to(g / b.data, a))
            if b.requires_grad:
                _acc(b, _reduce_to(-g * a.data / (b.data * b.data), b))
        out._backward = _bw
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


_UNARY = {
    # tag: (forward, local derivative from (x, y))
    "relu": (lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(np.float64)),
    "sigmoid": (_sigmoid, lambda x, y: y * (1.0 - y)),
    "tanh": (np.tanh, lambda x, y: 1.0 - y * y),
    "exp": (np.exp, lambda x, y: y),
    "log": (np.log, lambda x, y: 1.0 / x),
    "neg": (np.negative, lambda x, y: -np.ones_like(x)),
    "square": (np.square, lambda x, y: 2.0 * x),
    "sqrt": (np.sqrt, lambda x, y: 0.5 / y),
}

_BINARY = {"add": add, "sub": sub, "mul": mul, "multiply": mul, "div": div}


def elementwise(tag: str, a, b=None) -> Tensor:
    """Apply the elementwise operation named ``tag``.

    Unary tags: relu, sigmoid, tanh, exp, log, neg, square, sqrt.
    Binary tags: add, sub, mul (alias multiply), div.
    """
    if tag in _BINARY:
        if b is None:
            raise ValueError(f"elementwise '{tag}' needs two operands")
        return _BINARY[tag](a, b)
    if tag not in _UNARY:
        raise ValueError(f"unknown elementwise op '{tag}'")
    if b is not None:
        raise ValueError(f"elementwise '{tag}' is unary")
    a = as_tensor(a)
    fwd, deriv = _UNARY[tag]
    y = fwd(a.data)
    out = Tensor._make(y, (a,), tag)
    if out.requires_grad:
        def _bw(g):
            _acc(a, g * deriv(a.data, y))
        out._backward = _bw
    return out


def relu(x):
    return elementwise("relu", x)


def sigmoid(x):
    return elementwise("sigmoid", x)


def tanh(x):
    return elementwise("tanh", x)


# ---------------------------------------------------------------------------
# linear algebra and convolution
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    out = Tensor._make(a.data @ b.data, (a, b), "matmul")
    if out.requires_grad:
        def _bw(g):
            if a.requires_grad:
                _acc(a, g @ b.data.T)
            if b.requires_grad:
                _acc(b, a.data.T @ g)
        out._backward = _bw
    return out


def add_bias(x, bias) -> Tensor:
    """``x[..., j] + bias[j]``: explicit per-feature bias along the last axis."""
    x, bias = as_tensor(x), as_tensor(bias)
    if bias.ndim != 1 or x.shape[-1:] != bias.shape:
        raise ShapeError(f"add_bias: bias {bias.shape} does not match last axis of {x.shape}")
    out = Tensor._make(x.data + bias.data, (x, bias), "add_bias")
    if out.requires_grad:
        def _bw(g):
            _acc(x, g)
            if bias.requires_grad:
                _acc(bias, g.reshape(-1, g.shape[-1]).sum(axis=0))
        out._backward = _bw
    return out


def linear(x, weight, bias=None) -> Tensor:
    y = matmul(x, weight)
    return y if bias is None else add_bias(y, bias)


def conv2d(x, w, b=None) -> Tensor:
    """Valid, stride-1 cross-correlation.

    ``x`` is ``(C_in, H, W)`` or batched ``(N, C_in, H, W)``; ``w`` is
    ``(C_out, C_in, fh, fw)``; ``b`` is ``(C_out,)`` or None. Output is
    ``(N, C_out, H - fh + 1, W - fw + 1)`` (batch axis dropped for 3-D input).
    """
    x, w = as_tensor(x), as_tensor(w)
    squeeze = x.ndim == 3
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects input (N,C,H,W) and filters (F,C,fh,fw), got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    f, c2, fh, fw = w.shape
    if c != c2:
        raise ShapeError(f"conv2d: input has {c} channels but filters expect {c2}")
    if fh > h or fw > wd:
        raise ShapeError(f"conv2d: filter {fh}x{fw} larger than input {h}x{wd}")
    cols = kernels.unfold(x.data, fh, fw)  # N, oh, ow, C*fh*fw
    oh, ow = cols.shape[1], cols.shape[2]
    wmat = w.data.reshape(f, -1)
    y = cols.reshape(-1, wmat.shape[1]) @ wmat.T  # N*oh*ow, F
    del cols  # large; the backward pass unfolds x again instead of keeping it alive
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (f,):
            raise ShapeError(f"conv2d: bias shape {b.shape}, expected ({f},)")
        y += b.data
        parents.append(b)
    out_data = np.ascontiguousarray(y.reshape(n, oh, ow, f).transpose(0, 3, 1, 2))
    out = Tensor._make(out_data, parents, "conv2d")
    if out.requires_grad:
        def _bw(g):
            gmat = g.transpose(0, 2, 3, 1).reshape(-1, f)
            if w.requires_grad:
                cols = kernels.unfold(x.data, fh, fw).reshape(-1, wmat.shape[1])
                _acc(w, (gmat.T @ cols).reshape(w.shape))
                del cols
            if b is not None and b.requires_grad:
                _acc(b, gmat.sum(axis=0))
            if x.requires_grad:
                dcols = (gmat @ wmat).reshape(n, oh, ow, -1)
                _acc(x, kernels.fold(dcols, c, fh, fw))
        out._backward = _bw
    if squeeze:
        out = reshape(out, out.shape[1:])
    return out


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _norm_axis(axis, ndim: int):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    norm = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for rank {ndim}")
        norm.append(ax % ndim)
    return tuple(sorted(norm))


def reduce(tag: str, x, axis=None) -> Tensor:
    """Reduce along ``axis`` (None = all axes) with tag sum, mean, max or argmax.

    argmax returns a constant index tensor; ties go to the lowest index. max sends
    its gradient to the first maximal element.
    """
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    if tag == "argmax":
        if axes is not None and len(axes) != 1:
            raise ValueError("argmax reduces over a single axis")
        if x.size == 0 or (axes is not None and x.shape[axes[0]] == 0):
            raise ShapeError("argmax over an empty axis")
        ax = None if axes is None else axes[0]
        return Tensor(np.argmax(x.data, axis=ax).astype(np.float64))
    if axes is not None and any(x.shape[a] == 0 for a in axes) or x.size == 0:
        raise ShapeError(f"{tag} over an empty axis of shape {x.shape}")
    if tag == "sum":
        y = x.data.sum(axis=axes)
    elif tag == "mean":
        y = x.data.mean(axis=axes)
    elif tag == "max":
        y = x.data.max(axis=axes)
    else:
        raise ValueError(f"unknown reduction '{tag}'")
    out = Tensor._make(np.asarray(y, dtype=np.float64), (x,), tag)
    if out.requires_grad:
        kept = (1,) * x.ndim if axes is None else tuple(1 if i in axes else s for i, s in enumerate(x.shape))
        count = x.size if axes is None else int(np.prod([x.shape[a] for a in axes]))

        def _bw(g):
            gk = np.reshape(g, kept)
            if tag == "sum":
                _acc(x, np.broadcast_to(gk, x.shape))
            elif tag == "mean":
                _acc(x, np.broadcast_to(gk / count, x.shape))
            else:
                _acc(x, _first_max_mask(x.data, axes) * gk)
        out._backward = _bw
    return out


def _first_max_mask(a: np.ndarray, axes) -> np.ndarray:
    if axes is None:
        mask = np.zeros(a.size)
        mask[np.argmax(a)] = 1.0
        return mask.reshape(a.shape)
    rest = [i for i in range(a.ndim) if i not in axes]
    moved = np.transpose(a, rest + list(axes))
    flat = moved.reshape(moved.shape[: len(rest)] + (-1,))
    hit = np.argmax(flat, axis=-1)
    mask = np.zeros_like(flat)
    np.put_along_axis(mask, hit[..., None], 1.0, axis=-1)
    mask = mask.reshape(moved.shape)
    return np.transpose(mask, np.argsort(rest + list(axes)))


def sum(x, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return reduce("sum", x, axis)


def mean(x, axis=None) -> Tensor:
    return reduce("mean", x, axis)


def argmax(x, axis=None) -> Tensor:
    return reduce("argmax", x, axis)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    y = x.data.reshape(shape)
    out = Tensor._make(y, (x,), "reshape")
    if out.requires_grad:
        out._backward = lambda g: _acc(x, g.reshape(x.shape))
    return out


def flatten(x, start: int = 1) -> Tensor:
    x = as_tensor(x)
    return reshape(x, x.shape[:start] + (-1,))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    out = Tensor._make(np.ascontiguousarray(np.transpose(x.data, axes)), (x,), "transpose")
    if out.requires_grad:
        inv = tuple(np.argsort(axes))
        out._backward = lambda g: _acc(x, np.transpose(g, inv))
    return out


def index(x, idx) -> Tensor:
    """Basic or integer-array indexing; the gradient is scattered back."""
    x = as_tensor(x)
    y = np.array(x.data[idx], dtype=np.float64)
    out = Tensor._make(y, (x,), "index")
    if out.requires_grad:
        if _is_basic_index(idx):
            out._backward = lambda g: _acc_at(x, idx, g)
        else:
            def _bw(g):
                if x.grad is None:
                    x.grad = np.zeros_like(x.data)
                np.add.at(x.grad, idx, g)
            out._backward = _bw
    return out


def _is_basic_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis for p in parts)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("concat of an empty list")
    nd = ts[0].ndim
    ax = axis % nd
    for t in ts:
        if t.ndim != nd or t.shape[:ax] + t.shape[ax + 1:] != ts[0].shape[:ax] + ts[0].shape[ax + 1:]:
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]} along axis {axis}")
    out = Tensor._make(np.concatenate([t.data for t in ts], axis=ax), ts, "concat")
    if out.requires_grad:
        bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

        def _bw(g):
            for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
                if t.requires_grad:
                    sl = [slice(None)] * nd
                    sl[ax] = slice(lo, hi)
                    _acc(t, g[tuple(sl)])
        out._backward = _bw
    return out


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    return concat([reshape(t, t.shape[:axis % (t.ndim + 1)] + (1,) + t.shape[axis % (t.ndim + 1):]) for t in ts], axis)


def unstack(x, axis: int = 0) -> list[Tensor]:
    """Split along ``axis`` into views; gradients land in one shared buffer."""
    x = as_tensor(x)
    ax = axis % x.ndim
    outs = []
    for i in range(x.shape[ax]):
        sl = [slice(None)] * x.ndim
        sl[ax] = i
        key = tuple(sl)
        o = Tensor._make(np.ascontiguousarray(x.data[key]), (x,), "unstack")
        if o.requires_grad:
            o._backward = (lambda k: (lambda g: _acc_at(x, k, g)))(key)
        outs.append(o)
    return outs


# ---------------------------------------------------------------------------
# normalization, probability and losses
# ---------------------------------------------------------------------------

def _feature_view(a: np.ndarray) -> np.ndarray:
    # (N, F, ...) -> (N, F, R)
    return a.reshape(a.shape[0], a.shape[1], -1)


def _weighted_feature_sum(w: np.ndarray, a: np.ndarray) -> np.ndarray:
    # sum over rows (weighted by w) and trailing positions of an (N, F, R) array; a BLAS matvec
    n, f, r = a.shape
    return (w @ a.reshape(n, f * r)).reshape(f, r).sum(axis=1)


def batch_norm(x, gamma, beta, eps: float = 1e-5, mask=None):
    """Training-mode batch normalization over axis 1 of ``x`` ((N, F) or (N, F, ...)).

    Statistics pool the batch axis and every trailing axis. ``mask`` (shape (N,),
    0/1) excludes padded rows from the statistics. Returns ``(y, mean, var)`` with
    the biased batch statistics as plain arrays for running-average bookkeeping.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim < 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"batch_norm: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    xv = _feature_view(x.data)
    n, f, r = xv.shape
    w = np.ones(n) if mask is None else np.asarray(mask, dtype=np.float64).reshape(n)
    wsum = w.sum() * r
    if wsum <= 0:
        raise ValueError("batch_norm: no unmasked entries")
    w3 = w[:, None, None]
    mu = _weighted_feature_sum(w, xv) / wsum
    xhat = xv - mu[None, :, None]
    var = _weighted_feature_sum(w, np.square(xhat)) / wsum
    inv = 1.0 / np.sqrt(var + eps)
    xhat *= inv[None, :, None]
    y = xhat * gamma.data[None, :, None]
    y += beta.data[None, :, None]
    out = Tensor._make(y.reshape(x.shape), (x, gamma, beta), "batch_norm")
    if out.requires_grad:
        def _bw(g):
            gv = _feature_view(g)
            sg = _weighted_feature_sum(w, gv)
            sgx = _weighted_feature_sum(w, gv * xhat)
            if gamma.requires_grad:
                _acc(gamma, sgx)
            if beta.requires_grad:
                _acc(beta, sg)
            if x.requires_grad:
                dx = (gamma.data * inv)[None, :, None] * (
                    gv - w3 * (sg[None, :, None] + xhat * sgx[None, :, None]) / wsum
                )
                _acc(x, dx.reshape(x.shape))
        out._backward = _bw
    return out, mu, var


def affine_norm(x, gamma, beta, mean: np.ndarray, var: np.ndarray, eps: float = 1e-5) -> Tensor:
    """Inference-mode batch normalization with fixed statistics."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    inv = 1.0 / np.sqrt(np.asarray(var) + eps)
    xv = _feature_view(x.data)
    xhat = (xv - np.asarray(mean)[None, :, None]) * inv[None, :, None]
    y = gamma.data[None, :, None] * xhat + beta.data[None, :, None]
    out = Tensor._make(y.reshape(x.shape), (x, gamma, beta), "affine_norm")
    if out.requires_grad:
        def _bw(g):
            gv = _feature_view(g)
            if gamma.requires_grad:
                _acc(gamma, (gv * xhat).sum(axis=(0, 2)))
            if beta.requires_grad:
                _acc(beta, gv.sum(axis=(0, 2)))
            if x.requires_grad:
                _acc(x, (gv * (gamma.data * inv)[None, :, None]).reshape(x.shape))
        out._backward = _bw
    return out


def log_softmax(x) -> Tensor:
    """Log-softmax over the last axis, via the max-shifted log-sum-exp."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    out = Tensor._make(y, (x,), "log_softmax")
    if out.requires_grad:
        p = np.exp(y)
        out._backward = lambda g: _acc(x, g - p * g.sum(axis=-1, keepdims=True))
    return out


def softmax(x) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)
    out = Tensor._make(p, (x,), "softmax")
    if out.requires_grad:
        out._backward = lambda g: _acc(x, p * (g - (g * p).sum(axis=-1, keepdims=True)))
    return out


def dropout(x, p: float, rng: np.random.Generator | None, train: bool = True) -> Tensor:
    """Inverted dropout: surviving units are scaled by 1/(1-p). Identity outside training."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    x = as_tensor(x)
    if not train or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(np.float64) / (1.0 - p)
    return mul(x, Tensor(keep))


def parameters_grad_norm(params: Iterable[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return float(np.sqrt(total))


def cosine_similarity(a, b, eps: float = 1e-9):
    """Row-wise cosine similarity along the last axis.

    Rows where either vector has norm below ``eps`` have no direction: their
    similarity is reported as 0 with zero gradient. Returns ``(cos, valid)`` where
    ``valid`` is a 0/1 array marking rows with a defined direction.
    """
    a, b = _binary_operands(a, b, "cosine_similarity")
    na = np.sqrt((a.data * a.data).sum(axis=-1))
    nb = np.sqrt((b.data * b.data).sum(axis=-1))
    valid = (na >= eps) & (nb >= eps)
    safe_a = np.where(valid, na, 1.0)
    safe_b = np.where(valid, nb, 1.0)
    dot = (a.data * b.data).sum(axis=-1)
    cos = np.where(valid, dot / (safe_a * safe_b), 0.0)
    out = Tensor._make(cos, (a, b), "cosine")
    if out.requires_grad:
        def _bw(g):
            gv = np.where(valid, g, 0.0)[..., None]
            c = cos[..., None]
            if a.requires_grad:
                _acc(a, gv * (b.data / (safe_a * safe_b)[..., None] - c * a.data / (safe_a ** 2)[..., None]))
            if b.requires_grad:
                _acc(b, gv * (a.data / (safe_a * safe_b)[..., None] - c * b.data / (safe_b ** 2)[..., None]))
        out._backward = _bw
    return out, valid.astype(np.float64)
