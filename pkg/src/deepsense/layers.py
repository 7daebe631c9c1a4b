"""Neural building blocks: conv subnets, batch norm, GRU layers, dense heads.

Modules own their parameters as gradient-tracking ``Tensor`` leaves and expose
them through ``named_parameters`` in a fixed traversal order (attribute
definition order, depth first). Running statistics are buffers, not parameters.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Module:
    _buffers: tuple[str, ...] = ()

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = []
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                out.append((prefix + name, value))
        for name, child in self._children():
            out.extend(child.named_parameters(f"{prefix}{name}."))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
        out = [(prefix + name, getattr(self, name)) for name in self._buffers]
        for name, child in self._children():
            out.extend(child.named_buffers(f"{prefix}{name}."))
        return out

    def set_buffer(self, dotted: str, value: np.ndarray) -> None:
        head, _, rest = dotted.partition(".")
        if not rest:
            setattr(self, head, np.array(value, dtype=np.float64))
            return
        obj = getattr(self, head)
        if isinstance(obj, (list, tuple)):
            idx, _, rest = rest.partition(".")
            obj = obj[int(idx)]
        obj.set_buffer(rest, value)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class _RunningStats(Module):
    """Exponential running averages, or plain cumulative ones when ``momentum`` is None."""

    momentum: float | None
    _seen: dict

    def _decay(self, slot: int) -> float:
        if self.momentum is not None:
            return self.momentum
        k = self._seen.get(slot, 0)
        self._seen[slot] = k + 1
        return k / (k + 1)

    def start_cumulative(self) -> None:
        self.momentum, self._seen = None, {}


class BatchNorm(_RunningStats):
    """Per-feature normalization over axis 1, statistics pooled over all other axes."""

    _buffers = ("running_mean", "running_var")

    def __init__(self, num_features: int, momentum: float = 0.9, eps: float = 1e-5):
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.gamma = T.parameter(np.ones(num_features))
        self.beta = T.parameter(np.zeros(num_features))
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor, train: bool, mask=None, track: bool = True) -> Tensor:
        if not train:
            return T.affine_norm(x, self.gamma, self.beta, self.running_mean, self.running_var, self.eps)
        y, mu, var = T.batch_norm(x, self.gamma, self.beta, self.eps, mask)
        if track:
            count = (x.shape[0] if mask is None else float(np.sum(mask))) * (x.size // (x.shape[0] * x.shape[1]))
            unbiased = var * count / (count - 1) if count > 1 else var
            m = self._decay(0)
            self.running_mean = m * self.running_mean + (1 - m) * mu
            self.running_var = m * self.running_var + (1 - m) * unbiased
        return y


class RecurrentBatchNorm(_RunningStats):
    """Batch norm with separate statistics per time step.

    Scale and shift are shared across steps. Running averages are kept for steps
    ``0 .. max_steps-1``; later steps reuse the last slot.
    """

    _buffers = ("running_mean", "running_var")

    def __init__(self, num_features: int, max_steps: int, momentum: float = 0.9, eps: float = 1e-5):
        self.gamma = T.parameter(np.ones(num_features))
        self.beta = T.parameter(np.zeros(num_features))
        self.running_mean = np.zeros((max_steps, num_features))
        self.running_var = np.ones((max_steps, num_features))
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor, step: int, train: bool, mask=None, track: bool = True) -> Tensor:
        s = min(step, self.running_mean.shape[0] - 1)
        if not train:
            return T.affine_norm(x, self.gamma, self.beta, self.running_mean[s], self.running_var[s], self.eps)
        y, mu, var = T.batch_norm(x, self.gamma, self.beta, self.eps, mask)
        if track:
            count = x.shape[0] if mask is None else float(np.sum(mask))
            unbiased = var * count / (count - 1) if count > 1 else var
            m = self._decay(s)
            self.running_mean[s] = m * self.running_mean[s] + (1 - m) * mu
            self.running_var[s] = m * self.running_var[s] + (1 - m) * unbiased
        return y


def modules(root: Module):
    """Depth-first iterator over ``root`` and all nested submodules."""
    yield root
    for _, child in root._children():
        yield from modules(child)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, fh: int, fw: int, rng: np.random.Generator):
        self.weight = T.parameter(glorot_uniform(rng, (c_out, c_in, fh, fw), c_in * fh * fw, c_out * fh * fw))
        self.bias = T.parameter(np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias)


class ConvSubnet(Module):
    """Three conv -> batch norm -> ReLU stages, flattened to one vector per row.

    The first filter spans the full input height, so every later stage is a 1-D
    convolution along the frequency (or feature) axis.
    """

    def __init__(self, height: int, width: int, widths: Sequence[int], filters: int,
                 rng: np.random.Generator, name: str = "subnet"):
        widths = tuple(int(w) for w in widths)
        need = sum(widths) - len(widths) + 1
        if width < need:
            raise ValueError(
                f"{name}: input width {width} too small for filter widths {widths}; needs at least {need}"
            )
        self.height = height
        self.in_width = width
        self.convs = [Conv2d(1, filters, height, widths[0], rng)] + [
            Conv2d(filters, filters, 1, w, rng) for w in widths[1:]
        ]
        self.norms = [BatchNorm(filters) for _ in widths]
        self.out_width = width - need + 1
        self.filters = filters

    @property
    def output_size(self) -> int:
        return self.filters * self.out_width

    def __call__(self, x: Tensor, train: bool, mask=None, track: bool = True) -> Tensor:
        """``x``: (N, 1, height, width) or (height, width). Returns (N, filters*out_width)."""
        if x.ndim == 2:
            x = T.reshape(x, (1, 1) + x.shape)
        if x.shape[1:] != (1, self.height, self.in_width):
            raise T.ShapeError(f"subnet expects (N, 1, {self.height}, {self.in_width}), got {x.shape}")
        for conv, bn in zip(self.convs, self.norms):
            x = T.relu(bn(conv(x), train, mask, track))
        return T.flatten(x)


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.weight = T.parameter(glorot_uniform(rng, (n_in, n_out), n_in, n_out))
        self.bias = T.parameter(np.zeros(n_out))

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


def append_interval_width(features, widths) -> Tensor:
    """Append each row's interval width (seconds, unnormalized) as one extra feature.

    ``features`` is (N, F) or a single (F,) vector; ``widths`` is (N,) or a scalar.
    """
    x = T.as_tensor(features)
    single = x.ndim == 1
    if single:
        x = T.reshape(x, (1, -1))
    tau = np.asarray(widths, dtype=np.float64).reshape(-1, 1)
    if tau.shape[0] != x.shape[0]:
        raise T.ShapeError(f"{tau.shape[0]} widths for {x.shape[0]} feature rows")
    out = T.concat([x, T.constant(tau)], axis=1)
    return T.reshape(out, (-1,)) if single else out


class GRULayer(Module):
    """GRU with recurrent batch norm on the gate pre-activations.

        z  = sigmoid(BN_z(W_z [x ; h] + b_z))
        r  = sigmoid(BN_r(W_r [x ; h] + b_r))
        h~ = tanh(BN_h(W_h [x ; r*h] + b_h))
        h' = (1 - z) * h + z * h~

    Each ``W_*`` is stored as one ``(n_in + hidden, hidden)`` matrix acting on the
    row vector ``[x ; h]``.
    """

    def __init__(self, n_in: int, hidden: int, max_steps: int, rng: np.random.Generator):
        self.n_in = n_in
        self.hidden = hidden
        fan = n_in + hidden
        self.w_z = T.parameter(glorot_uniform(rng, (fan, hidden), fan, hidden))
        self.w_r = T.parameter(glorot_uniform(rng, (fan, hidden), fan, hidden))
        self.w_h = T.parameter(glorot_uniform(rng, (fan, hidden), fan, hidden))
        self.b_z = T.parameter(np.zeros(hidden))
        self.b_r = T.parameter(np.zeros(hidden))
        self.b_h = T.parameter(np.zeros(hidden))
        self.bn_z = RecurrentBatchNorm(hidden, max_steps)
        self.bn_r = RecurrentBatchNorm(hidden, max_steps)
        self.bn_h = RecurrentBatchNorm(hidden, max_steps)

    def split_weights(self):
        """Input-side weights fused across gates, plus the three hidden-side blocks."""
        n = self.n_in
        wx = T.concat([self.w_z[:n], self.w_r[:n], self.w_h[:n]], axis=1)
        return wx, self.w_z[n:], self.w_r[n:], self.w_h[n:]

    def step(self, x_t: Tensor, h_prev: Tensor, t: int, train: bool, mask=None,
             weights=None, track: bool = True) -> Tensor:
        if x_t.ndim != 2 or x_t.shape[1] != self.n_in or h_prev.shape != (x_t.shape[0], self.hidden):
            raise T.ShapeError(
                f"gru step: x {x_t.shape} / h {h_prev.shape} do not fit n_in={self.n_in}, hidden={self.hidden}"
            )
        wx, hz, hr, hh = weights if weights is not None else self.split_weights()
        h = self.hidden
        px = T.matmul(x_t, wx)
        pre_z = T.add_bias(px[:, :h] + T.matmul(h_prev, hz), self.b_z)
        pre_r = T.add_bias(px[:, h:2 * h] + T.matmul(h_prev, hr), self.b_r)
        z = T.sigmoid(self.bn_z(pre_z, t, train, mask, track))
        r = T.sigmoid(self.bn_r(pre_r, t, train, mask, track))
        pre_h = T.add_bias(px[:, 2 * h:] + T.matmul(r * h_prev, hh), self.b_h)
        cand = T.tanh(self.bn_h(pre_h, t, train, mask, track))
        return h_prev + z * (cand - h_prev)


def gru_step(x_t, h_prev, layer: GRULayer, t: int = 0, train: bool = False, mask=None) -> Tensor:
    """One GRU update of ``layer`` for a batch (or a single vector) of inputs."""
    x_t, h_prev = T.as_tensor(x_t), T.as_tensor(h_prev)
    single = x_t.ndim == 1
    if single:
        x_t = T.reshape(x_t, (1, -1))
        h_prev = T.reshape(h_prev, (1, -1))
    h = layer.step(x_t, h_prev, t, train, mask)
    return T.reshape(h, (-1,)) if single else h


class StackedGRU(Module):
    """GRU layers in sequence with inverted dropout on the connections between them."""

    def __init__(self, n_in: int, hidden: int | Sequence[int], n_layers: int, max_steps: int,
                 dropout: float, rng: np.random.Generator):
        if not 0.0 <= dropout < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {dropout}")
        sizes = [hidden] * n_layers if isinstance(hidden, int) else list(hidden)
        self.layers = []
        prev = n_in
        for hsz in sizes:
            self.layers.append(GRULayer(prev, hsz, max_steps, rng))
            prev = hsz
        self.dropout = dropout

    @property
    def output_size(self) -> int:
        return self.layers[-1].hidden

    def init_state(self, batch: int) -> list[Tensor]:
        return [T.constant(np.zeros((batch, layer.hidden))) for layer in self.layers]

    def __call__(self, xs: Sequence[Tensor], train: bool, rng: np.random.Generator | None = None,
                 mask: np.ndarray | None = None, track: bool = True) -> list[Tensor]:
        """Run over the whole sequence. ``xs[t]`` is (B, n_in); ``mask`` is (B, T) or None.

        Returns the top layer's hidden state at every step.
        """
        if len(xs) < 1:
            raise ValueError("stacked GRU needs at least one time step")
        seq = list(xs)
        batch = seq[0].shape[0]
        for li, layer in enumerate(self.layers):
            if li > 0 and train and self.dropout > 0:
                seq = [T.dropout(x, self.dropout, rng, train=True) for x in seq]
            weights = layer.split_weights()
            h = T.constant(np.zeros((batch, layer.hidden)))
            outs = []
            for t, x_t in enumerate(seq):
                m = None if mask is None else mask[:, t]
                h = layer.step(x_t, h, t, train, m, weights, track)
                outs.append(h)
            seq = outs
        return seq

    def step(self, x_t: Tensor, state: list[Tensor], t: int) -> tuple[Tensor, list[Tensor]]:
        """Inference-mode single step with carried ``state`` (one hidden per layer)."""
        new_state = []
        inp = x_t
        for layer, h in zip(self.layers, state):
            inp = layer.step(inp, h, t, train=False)
            new_state.append(inp)
        return inp, new_state
