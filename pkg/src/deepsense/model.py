"""The DeepSense network: per-sensor conv subnets, a merge subnet, stacked GRU, task head.

Inputs are one array per sensor shaped ``(B, d_k, 2f, T)`` plus interval widths
``(B, T)`` in seconds. Variant routing:

full          individual subnets -> merge subnet -> stacked GRU
singleGRU     as full, but one GRU layer whose width keeps the parameter count
noIndvConv    sensor inputs concatenated along the measurement axis -> merge subnet
noMergeConv   individual subnets, flattened outputs concatenated -> stacked GRU
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .layers import ConvSubnet, Dense, Module, StackedGRU, append_interval_width
from .tensor import Tensor

VARIANTS = ("full", "singleGRU", "noIndvConv", "noMergeConv")
TASKS = ("classification", "regression")


@dataclass(frozen=True)
class DeepSenseConfig:
    dims: tuple[int, ...] = (3, 3)
    f: int = 10
    T: int = 20
    tau: float = 0.25
    cov1: int = 3
    cov2: int = 3
    cov3: int = 3
    cov4: int = 3
    cov5: int = 3
    cov6: int = 3
    filters: int = 64
    gru_hidden: int = 64
    gru_layers: int = 2
    dropout: float = 0.5
    variant: str = "full"
    task: str = "classification"
    n_classes: int = 6
    out_dim: int = 2
    single_gru_hidden: int = 0  # 0 = solve for parameter parity with the stacked GRU

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if self.K < 1 or any(d < 1 for d in self.dims):
            raise ValueError(f"need at least one sensor with positive dimension, got dims={self.dims}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant '{self.variant}', expected one of {VARIANTS}")
        if self.task not in TASKS:
            raise ValueError(f"unknown task '{self.task}', expected one of {TASKS}")
        if self.f < 1 or self.T < 1 or self.tau <= 0:
            raise ValueError("f, T and tau must be positive")
        if self.filters < 1 or self.gru_hidden < 1 or self.gru_layers < 1:
            raise ValueError("filters, gru_hidden and gru_layers must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.dropout}")
        if self.task == "classification" and self.n_classes < 2:
            raise ValueError("classification needs at least 2 classes")

    @property
    def K(self) -> int:
        return len(self.dims)

    @property
    def conv_individual(self) -> tuple[int, int, int]:
        return (self.cov1, self.cov2, self.cov3)

    @property
    def conv_merge(self) -> tuple[int, int, int]:
        return (self.cov4, self.cov5, self.cov6)

    def replace(self, **changes) -> "DeepSenseConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        """Canonical ``model.key=value`` lines, sorted by key."""
        lines = []
        for fld in sorted(dataclasses.fields(self), key=lambda f: f.name):
            v = getattr(self, fld.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"model.{fld.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DeepSenseConfig":
        kinds = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            key = key.strip().removeprefix("model.")
            if key not in kinds:
                continue
            values[key] = _parse_field(key, val.strip())
        return cls(**values)


def _parse_field(name: str, raw: str):
    default = getattr(DeepSenseConfig(), name)
    if isinstance(default, tuple):
        return tuple(int(x) for x in raw.split(",") if x.strip())
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


@dataclass
class ForwardResult:
    features: list  # per-interval top GRU outputs, each (B, hidden)
    output: Tensor  # logits (B, C) or predictions (B, T, out_dim)
    probs: Tensor | None = None
    extras: dict = field(default_factory=dict)


class DeepSenseModel(Module):
    def __init__(self, config: DeepSenseConfig, rng: np.random.Generator):
        self.config = config
        cfg = config
        width = 2 * cfg.f
        self.individual = []
        self.merge = None
        if cfg.variant != "noIndvConv":
            self.individual = [
                ConvSubnet(d, width, cfg.conv_individual, cfg.filters, rng, name=f"individual subnet (sensor {k})")
                for k, d in enumerate(cfg.dims)
            ]
        if cfg.variant in ("full", "singleGRU"):
            self.merge = ConvSubnet(cfg.K, self.individual[0].output_size, cfg.conv_merge, cfg.filters, rng,
                                    name="merge subnet")
            feat = self.merge.output_size
        elif cfg.variant == "noIndvConv":
            self.merge = ConvSubnet(sum(cfg.dims), width, cfg.conv_merge, cfg.filters, rng, name="merge subnet")
            feat = self.merge.output_size
        else:
            feat = sum(s.output_size for s in self.individual)
        self.feature_size = feat
        if cfg.variant == "singleGRU":
            hidden = cfg.single_gru_hidden or solve_single_gru_hidden(cfg)
            self.gru = StackedGRU(feat + 1, hidden, 1, cfg.T, cfg.dropout, rng)
        else:
            self.gru = StackedGRU(feat + 1, cfg.gru_hidden, cfg.gru_layers, cfg.T, cfg.dropout, rng)
        n_out = cfg.n_classes if cfg.task == "classification" else cfg.out_dim
        self.head = Dense(self.gru.output_size, n_out, rng)

    # -- convolutional front end ----------------------------------------
    def interval_features(self, inputs, widths, train: bool, mask=None, track: bool = True) -> Tensor:
        """Per-interval fused features with the interval width appended: (B*T, feat+1)."""
        cfg = self.config
        if len(inputs) != cfg.K:
            raise ValueError(f"model expects {cfg.K} sensor inputs, got {len(inputs)}")
        arrays = [np.asarray(x, dtype=np.float64) for x in inputs]
        b, t = arrays[0].shape[0], arrays[0].shape[3]
        for k, (x, d) in enumerate(zip(arrays, cfg.dims)):
            if x.shape != (b, d, 2 * cfg.f, t):
                raise T.ShapeError(f"sensor {k}: expected input (B, {d}, {2 * cfg.f}, T), got {x.shape}")
        n = b * t
        rows = [np.ascontiguousarray(x.transpose(0, 3, 1, 2)).reshape(n, 1, x.shape[1], x.shape[2]) for x in arrays]
        row_mask = None if mask is None else np.asarray(mask, dtype=np.float64).reshape(n)
        if cfg.variant == "noIndvConv":
            feats = self.merge(T.constant(np.concatenate(rows, axis=2)), train, row_mask, track)
        else:
            per_sensor = [net(T.constant(r), train, row_mask, track) for net, r in zip(self.individual, rows)]
            if self.merge is None:
                feats = T.concat(per_sensor, axis=1)
            else:
                stacked = T.concat([T.reshape(p, (n, 1, 1, p.shape[1])) for p in per_sensor], axis=2)
                feats = self.merge(stacked, train, row_mask, track)
        return append_interval_width(feats, np.asarray(widths, dtype=np.float64).reshape(n))

    def __call__(self, inputs, widths, train: bool = False, rng: np.random.Generator | None = None,
                 mask=None, track: bool = True) -> ForwardResult:
        arrays = [np.asarray(x, dtype=np.float64) for x in inputs]
        b, t = arrays[0].shape[0], arrays[0].shape[3]
        widths = np.asarray(widths, dtype=np.float64).reshape(b, t)
        fused = self.interval_features(arrays, widths, train, mask, track)
        seq = T.unstack(T.reshape(fused, (b, t, fused.shape[1])), axis=1)
        hs = self.gru(seq, train, rng, mask, track)
        return self.head_forward(hs, mask)

    def head_forward(self, hs: list, mask=None) -> ForwardResult:
        """Apply the output layer to per-interval GRU outputs ``hs``."""
        b, h = hs[0].shape
        t = len(hs)
        if self.config.task == "classification":
            if mask is None:
                pooled = T.mean(T.stack(hs, axis=1), axis=1)
            else:
                m = np.asarray(mask, dtype=np.float64)
                wts = m / m.sum(axis=1, keepdims=True)
                pooled = T.sum(T.stack(hs, axis=1) * T.constant(np.repeat(wts[:, :, None], h, axis=2)), axis=1)
            logits = self.head(pooled)
            return ForwardResult(hs, logits, T.softmax(logits), {"pooled": pooled})
        flat = T.reshape(T.stack(hs, axis=1), (b * t, h))
        pred = T.reshape(self.head(flat), (b, t, self.config.out_dim))
        return ForwardResult(hs, pred)

    def stream(self, inputs, widths):
        """Inference over intervals one at a time with carried GRU state.

        Yields the head output for each prefix: regression predictions (B, out_dim)
        per interval, or classification probabilities from the running time average.
        """
        arrays = [np.asarray(x, dtype=np.float64) for x in inputs]
        b, t = arrays[0].shape[0], arrays[0].shape[3]
        widths = np.asarray(widths, dtype=np.float64).reshape(b, t)
        state = self.gru.init_state(b)
        hs = []
        for step in range(t):
            fused = self.interval_features([x[..., step:step + 1] for x in arrays], widths[:, step:step + 1],
                                           train=False)
            out, state = self.gru.step(fused, state, step)
            hs.append(out)
            res = self.head_forward(hs)
            yield out, (res.output[:, -1, :] if self.config.task == "regression" else res.probs)


def build(config: DeepSenseConfig, seed: int = 0) -> DeepSenseModel:
    """Initialize every parameter deterministically from ``seed``."""
    return DeepSenseModel(config, np.random.default_rng(seed))


def count_params(model: Module) -> int:
    """Trainable scalars, including batch-norm scale/shift; running statistics excluded."""
    return int(sum(p.size for p in model.parameters()))


def _gru_params(n_in: int, hidden: int) -> int:
    # three (n_in+h, h) matrices, three biases, three batch norms with scale+shift
    return 3 * (n_in + hidden) * hidden + 3 * hidden + 6 * hidden


def _head_params(n_in: int, cfg: DeepSenseConfig) -> int:
    n_out = cfg.n_classes if cfg.task == "classification" else cfg.out_dim
    return n_in * n_out + n_out


def solve_single_gru_hidden(cfg: DeepSenseConfig) -> int:
    """Width of one GRU layer whose recurrent+head parameters best match the stacked GRU's."""
    feat = _feature_size(cfg)
    target = 0
    n_in = feat + 1
    for _ in range(cfg.gru_layers):
        target += _gru_params(n_in, cfg.gru_hidden)
        n_in = cfg.gru_hidden
    target += _head_params(cfg.gru_hidden, cfg)
    best, best_gap = 1, None
    h = 1
    while True:
        size = _gru_params(feat + 1, h) + _head_params(h, cfg)
        gap = abs(size - target)
        if best_gap is None or gap < best_gap:
            best, best_gap = h, gap
        if size > target:
            return best
        h += 1


def _feature_size(cfg: DeepSenseConfig) -> int:
    width = 2 * cfg.f
    ind = cfg.filters * (width - sum(cfg.conv_individual) + 3)
    if cfg.variant == "noMergeConv":
        return cfg.K * ind
    merge_in = width if cfg.variant == "noIndvConv" else ind
    return cfg.filters * (merge_in - sum(cfg.conv_merge) + 3)


def predict_class(model: DeepSenseModel, inputs, widths) -> np.ndarray:
    """Argmax of the class probabilities; ties go to the lowest class index."""
    if model.config.task != "classification":
        raise ValueError("predict_class needs a classification model")
    res = model(inputs, widths, train=False)
    return np.argmax(res.probs.data, axis=-1)
