"""Losses, optimizer, training loop, gradient checking and checkpoints."""

from __future__ import annotations

import io
import json
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .data.samples import Sample
from .layers import BatchNorm, Module, RecurrentBatchNorm, modules
from .model import DeepSenseConfig, DeepSenseModel, build
from .tensor import Tensor


class DivergedError(RuntimeError):
    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"diverged: loss {value} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class CheckpointError(ValueError):
    pass


# -- losses ------------------------------------------------------------------------

def _one_hot_or_index(y, n_classes: int, batch: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim == 2:
        if y.shape != (batch, n_classes):
            raise ValueError(f"one-hot targets {y.shape} do not match logits ({batch}, {n_classes})")
        return y.astype(np.float64)
    if y.shape != (batch,):
        raise ValueError(f"expected {batch} labels, got shape {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    out = np.zeros((batch, n_classes))
    out[np.arange(batch), y.astype(np.int64)] = 1.0
    return out


def cross_entropy(logits, y) -> Tensor:
    """Mean over the batch of -sum_i y_i log softmax(logits)_i.

    ``logits`` is (B, C) (or (C,)); ``y`` holds integer labels or one-hot rows.
    """
    logits = T.as_tensor(logits)
    if logits.ndim == 1:
        logits = T.reshape(logits, (1, -1))
        y = np.asarray(y).reshape(1, -1) if np.ndim(y) == 1 and np.size(y) == logits.shape[1] else np.atleast_1d(y)
    b, c = logits.shape
    onehot = _one_hot_or_index(y, c, b)
    return T.mul(T.sum(T.mul(T.log_softmax(logits), T.constant(onehot))), -1.0 / b)


def mse(pred, target) -> Tensor:
    pred = T.as_tensor(pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    diff = T.sub(pred, T.constant(target))
    return T.mean(T.elementwise("square", diff))


@dataclass(frozen=True)
class CarTrackLossParams:
    lam: float = 1.0
    theta: float = math.pi / 6

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not 0.0 <= self.theta < math.pi:
            raise ValueError("theta must lie in [0, pi)")


def _check_spd(cov: np.ndarray) -> None:
    if not np.allclose(cov, np.swapaxes(cov, -1, -2), atol=1e-12):
        raise ValueError("target covariance must be symmetric")
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("target covariance must be positive definite") from exc


def gaussian_nll_terms(pred, mean, cov, mask=None) -> Tensor:
    """Per-interval NLL of 2-D predictions under N(mean, cov), masked; summed over all intervals."""
    pred = T.as_tensor(pred)
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    lead = pred.shape[:-1]
    if pred.shape[-1] != 2 or mean.shape != pred.shape or cov.shape != (*lead, 2, 2):
        raise ValueError(f"prediction {pred.shape}, target mean {mean.shape}, covariance {cov.shape} disagree")
    m = np.ones(lead) if mask is None else np.asarray(mask, dtype=np.float64).reshape(lead)
    # masked (padding) entries get an identity covariance so they never fail the SPD check
    cov = np.where(m[..., None, None] > 0, cov, np.eye(2))
    _check_spd(cov)
    prec = np.linalg.inv(cov)
    _, logdet = np.linalg.slogdet(cov)
    e = T.sub(pred, T.constant(mean))
    e0 = T.index(e, (..., 0))
    e1 = T.index(e, (..., 1))
    quad = T.add(
        T.add(T.mul(T.elementwise("square", e0), T.constant(prec[..., 0, 0] * m)),
              T.mul(T.mul(e0, e1), T.constant(2.0 * prec[..., 0, 1] * m))),
        T.mul(T.elementwise("square", e1), T.constant(prec[..., 1, 1] * m)),
    )
    const = float(np.sum(m * (0.5 * logdet + math.log(2 * math.pi))))
    return T.add(T.mul(T.sum(quad), 0.5), const)


def cosine_penalty(pred, mean, theta: float, mask=None) -> Tensor:
    """Sum over intervals of max(0, cos(theta) - cos_sim(pred, target)); 0 where a direction is undefined."""
    pred = T.as_tensor(pred)
    cos, valid = T.cosine_similarity(pred, T.constant(np.asarray(mean, dtype=np.float64)))
    w = valid if mask is None else valid * np.asarray(mask, dtype=np.float64).reshape(valid.shape)
    hinge = T.relu(T.sub(math.cos(theta), cos))
    return T.sum(T.mul(hinge, T.constant(w)))


def objective(loss: Tensor, penalties: Sequence[tuple[float, Tensor]] = ()) -> Tensor:
    """General cost: task loss plus weighted penalties, L = l + sum_j lambda_j * P_j."""
    total = loss
    for lam, pen in penalties:
        if lam != 0.0:
            total = T.add(total, T.mul(pen, float(lam)))
    return total


def cartrack_loss(pred, mean, cov, params: CarTrackLossParams = CarTrackLossParams(), mask=None) -> Tensor:
    """Gaussian NLL plus lambda-weighted angular hinge, both summed over intervals.

    ``pred``/``mean`` are (..., T, 2) and ``cov`` (..., T, 2, 2). With a leading
    batch axis the per-sequence sums are averaged over the batch.
    """
    pred = T.as_tensor(pred)
    batch = pred.shape[0] if pred.ndim == 3 else 1
    nll = gaussian_nll_terms(pred, mean, cov, mask)
    total = objective(nll, [(params.lam, cosine_penalty(pred, mean, params.theta, mask))])
    return T.mul(total, 1.0 / batch) if batch > 1 else total


@dataclass(frozen=True)
class LossSpec:
    name: str = "cross_entropy"  # cross_entropy | mse | cartrack
    lam: float = 1.0
    theta: float = math.pi / 6

    def __post_init__(self):
        if self.name not in ("cross_entropy", "mse", "cartrack"):
            raise ValueError(f"unknown loss {self.name!r}")
        CarTrackLossParams(self.lam, self.theta)


# -- batching --------------------------------------------------------------------------

@dataclass
class Batch:
    inputs: list  # per sensor (B, d, 2f, T)
    widths: np.ndarray  # (B, T)
    mask: np.ndarray | None  # (B, T) or None when no padding
    labels: np.ndarray | None = None
    target_mean: np.ndarray | None = None
    target_cov: np.ndarray | None = None


def collate(samples: Sequence[Sample]) -> Batch:
    """Stack samples, zero-padding shorter sequences and masking the padding."""
    if not samples:
        raise ValueError("empty batch")
    t_max = max(s.T for s in samples)
    b = len(samples)
    k = len(samples[0].inputs)
    inputs = []
    for j in range(k):
        d, h, _ = samples[0].inputs[j].shape
        arr = np.zeros((b, d, h, t_max))
        for i, s in enumerate(samples):
            arr[i, :, :, : s.T] = s.inputs[j]
        inputs.append(arr)
    widths = np.zeros((b, t_max))
    mask = np.zeros((b, t_max))
    for i, s in enumerate(samples):
        widths[i, : s.T] = s.widths
        mask[i, : s.T] = 1.0
    out = Batch(inputs, widths, None if mask.all() else mask)
    if all(s.label >= 0 for s in samples):
        out.labels = np.array([s.label for s in samples], dtype=np.int64)
    if all(s.target_mean is not None for s in samples):
        mean = np.zeros((b, t_max, 2))
        cov = np.tile(np.eye(2), (b, t_max, 1, 1))
        for i, s in enumerate(samples):
            mean[i, : s.T] = s.target_mean
            cov[i, : s.T] = s.target_cov
        out.target_mean, out.target_cov = mean, cov
    return out


def batch_loss(model: DeepSenseModel, batch: Batch, spec: LossSpec, train: bool, rng=None, track: bool = True):
    res = model(batch.inputs, batch.widths, train=train, rng=rng, mask=batch.mask, track=track)
    if spec.name == "cross_entropy":
        if batch.labels is None:
            raise ValueError("cross-entropy needs labelled samples")
        return cross_entropy(res.output, batch.labels), res
    if batch.target_mean is None:
        raise ValueError(f"{spec.name} loss needs displacement targets")
    if spec.name == "mse":
        if batch.mask is None:
            return mse(res.output, batch.target_mean), res
        w = np.repeat(batch.mask[:, :, None], 2, axis=2)
        diff = T.mul(T.sub(res.output, T.constant(batch.target_mean)), T.constant(w))
        return T.mul(T.sum(T.elementwise("square", diff)), 1.0 / w.sum()), res
    return cartrack_loss(res.output, batch.target_mean, batch.target_cov,
                         CarTrackLossParams(spec.lam, spec.theta), batch.mask), res


# -- optimizer ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OptimConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    clip: float = 5.0  # global gradient-norm ceiling; 0 disables

    def __post_init__(self):
        if self.lr < 0 or self.eps <= 0 or self.batch_size < 1 or self.clip < 0:
            raise ValueError("invalid optimizer settings")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("adam betas must lie in [0, 1)")


class Adam:
    """Adaptive-moment optimizer with bias correction."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        if self.lr == 0.0:
            return
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    norm = T.parameters_grad_norm(params)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


# -- training loop --------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: DeepSenseModel
    log: list = field(default_factory=list)


def _metric(model: DeepSenseModel, res, batch: Batch) -> float:
    """Training-split metric: accuracy for classification, mean final-displacement error otherwise."""
    if model.config.task == "classification":
        return float(np.mean(np.argmax(res.output.data, axis=1) == batch.labels))
    pred = res.output.data
    m = np.ones(pred.shape[:2]) if batch.mask is None else batch.mask
    err = (pred * m[..., None]).sum(1) - (batch.target_mean * m[..., None]).sum(1)
    return float(np.linalg.norm(err, axis=1).mean())


def evaluate(model: DeepSenseModel, samples: Sequence[Sample], spec: LossSpec, batch_size: int = 16) -> tuple[float, float]:
    """Inference-mode (dropout off, running statistics) loss and metric, sample-weighted."""
    tot_loss = tot_metric = 0.0
    n = 0
    for lo in range(0, len(samples), batch_size):
        batch = collate(samples[lo:lo + batch_size])
        loss, res = batch_loss(model, batch, spec, train=False)
        b = len(batch.widths)
        tot_loss += loss.item() * b
        tot_metric += _metric(model, res, batch) * b
        n += b
    return tot_loss / n, tot_metric / n


def train(model: DeepSenseModel, samples: Sequence[Sample], spec: LossSpec, optim: OptimConfig = OptimConfig(),
          epochs: int = 10, seed: int = 0, val: Sequence[Sample] | None = None, log_path=None,
          on_epoch: Callable | None = None) -> TrainResult:
    """Seeded mini-batch Adam training.

    Shuffle order and dropout masks come from two streams spawned from ``seed``,
    so equal seeds give bit-identical runs. Each epoch appends a
    ``{epoch, split, loss, metric}`` record (plus one for ``val`` if given);
    ``on_epoch(epoch, records)`` returning True ends training early.
    A non-finite batch loss raises :class:`DivergedError`.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("training set is empty")
    shuffle_ss, drop_ss = np.random.SeedSequence(seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    drop_rng = np.random.default_rng(drop_ss)
    params = model.parameters()
    opt = Adam(params, optim.lr, optim.beta1, optim.beta2, optim.eps)
    result = TrainResult(model)
    fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, epochs + 1):
            order = shuffle_rng.permutation(len(samples))
            tot_loss = tot_metric = 0.0
            for bi, lo in enumerate(range(0, len(order), optim.batch_size)):
                batch = collate([samples[i] for i in order[lo:lo + optim.batch_size]])
                model.zero_grad()
                loss, res = batch_loss(model, batch, spec, train=True, rng=drop_rng)
                value = loss.item()
                if not np.isfinite(value):
                    raise DivergedError(epoch, bi, value)
                loss.backward()
                clip_grad_norm(params, optim.clip)
                opt.step()
                b = len(batch.widths)
                tot_loss += value * b
                tot_metric += _metric(model, res, batch) * b
            records = [{"epoch": epoch, "split": "train", "loss": tot_loss / len(samples),
                        "metric": tot_metric / len(samples)}]
            if val:
                vl, vm = evaluate(model, list(val), spec, optim.batch_size)
                records.append({"epoch": epoch, "split": "val", "loss": vl, "metric": vm})
            for r in records:
                result.log.append(r)
                if fh:
                    fh.write(json.dumps(r, sort_keys=True) + "\n")
                    fh.flush()
            if on_epoch and on_epoch(epoch, records):
                break  # caller asked to stop
    finally:
        if fh:
            fh.close()
    model.zero_grad()
    return result


def recalibrate_batch_norm(model: DeepSenseModel, samples: Sequence[Sample], batch_size: int = 16,
                           seed: int = 0) -> None:
    """Replace running statistics with their plain average over ``samples``.

    Weights are untouched. Batches are taken in order with seeded dropout active,
    matching what the statistics saw during training. Per-step recurrent slots
    average only over the batches that reach that step.
    """
    norms = [m for m in modules(model) if isinstance(m, (BatchNorm, RecurrentBatchNorm))]
    saved = [m.momentum for m in norms]
    rng = np.random.default_rng(seed)
    for m in norms:
        m.start_cumulative()
    try:
        for lo in range(0, len(samples), batch_size):
            batch = collate(list(samples[lo:lo + batch_size]))
            model(batch.inputs, batch.widths, train=True, rng=rng, mask=batch.mask, track=True)
    finally:
        for m, mom in zip(norms, saved):
            m.momentum = mom
    model.zero_grad()


# -- gradient check -------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_err: float
    failures: list  # (parameter path, flat index, analytic, numeric, rel err)
    n_checked: int
    tolerance: float
    worst: str = ""

    @property
    def passed(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        state = "PASS" if self.passed else "FAIL"
        return (f"{state} max_rel_err={self.max_rel_err:.3e} over {self.n_checked} entries "
                f"(tol {self.tolerance:g}, worst {self.worst})")


def gradient_check_model(model: DeepSenseModel, batch: Batch, spec: LossSpec, tolerance: float = 1e-4,
                         step: float = 1e-5, floor: float = 1e-6, seed: int = 0,
                         max_entries: int | None = None) -> GradCheckReport:
    """Compare analytic parameter gradients against central differences.

    The loss is evaluated in training mode (batch statistics, dropout) with the
    dropout stream reseeded before every evaluation and running statistics left
    untouched, so each evaluation is the same deterministic function of the
    parameters. Relative error is |a - n| / max(|a|, |n|, floor * max(1, |L|)):
    central differences carry roundoff of order eps_machine * |L| / step, so
    gradients below the scaled floor (e.g. conv biases feeding batch norm, whose
    true gradient is exactly 0) are effectively compared in absolute terms.
    An entry that misses the tolerance is re-estimated once with step h/10:
    tiny-batch normalization can make the loss so sharply curved that the
    O(h^2) truncation error at h dominates, while for such entries (large
    gradients) the extra roundoff of the smaller step is negligible.
    """
    def loss_value():
        loss, _ = batch_loss(model, batch, spec, train=True, rng=np.random.default_rng(seed), track=False)
        return loss

    model.zero_grad()
    loss = loss_value()
    floor = floor * max(1.0, abs(loss.item()))
    loss.backward()
    named = model.named_parameters()
    analytic = {name: p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for name, p in named}
    model.zero_grad()
    pick_rng = np.random.default_rng(seed + 1)
    worst, worst_name = 0.0, ""
    failures = []
    n = 0
    for _, p in named:
        p.requires_grad = False  # finite differences need values only; skip taping
    try:
        for name, p in named:
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = np.sort(pick_rng.choice(flat.size, max_entries, replace=False))
            for i in idx:
                orig = flat[i]

                def central(h):
                    flat[i] = orig + h
                    up = loss_value().item()
                    flat[i] = orig - h
                    dn = loss_value().item()
                    flat[i] = orig
                    return (up - dn) / (2 * h)

                a = float(analytic[name].reshape(-1)[i])
                num = central(step)
                rel = abs(a - num) / max(abs(a), abs(num), floor)
                if rel > tolerance:
                    # strongly curved entry: truncation error dominates, shrink the step
                    num = central(step / 10)
                    rel = abs(a - num) / max(abs(a), abs(num), floor)
                n += 1
                if rel > worst:
                    worst, worst_name = rel, f"{name}[{i}]"
                if rel > tolerance:
                    failures.append((name, int(i), a, num, rel))
    finally:
        for _, p in named:
            p.requires_grad = True
    return GradCheckReport(worst, failures, n, tolerance, worst_name)


def micro_config(variant: str = "full", task: str = "classification") -> DeepSenseConfig:
    """Smallest configuration that still exercises every layer type."""
    return DeepSenseConfig(dims=(2, 2), f=4, T=3, cov1=2, cov2=2, cov3=2, cov4=1, cov5=1, cov6=1,
                           filters=8, gru_hidden=3, gru_layers=2, dropout=0.5, variant=variant, task=task,
                           n_classes=3, out_dim=2)


def micro_batch(config: DeepSenseConfig, batch: int = 3, seed: int = 0) -> Batch:
    rng = np.random.default_rng(seed)
    t = config.T
    inputs = [rng.normal(size=(batch, d, 2 * config.f, t)) for d in config.dims]
    widths = np.full((batch, t), 0.25)
    out = Batch(inputs, widths, None, labels=rng.integers(config.n_classes, size=batch))
    mean = rng.normal(size=(batch, t, 2))
    a = rng.normal(size=(batch, t, 2, 2)) * 0.3
    out.target_mean = mean
    out.target_cov = a @ np.swapaxes(a, -1, -2) + 0.5 * np.eye(2)
    return out


# -- checkpoint ---------------------------------------------------------------------------------

MAGIC = b"DSNS"
FORMAT_VERSION = 1


def checkpoint_bytes(model: DeepSenseModel) -> bytes:
    """Serialize: magic, u32 version, u32-length config text, u64 count + f64 parameters
    (``named_parameters`` order, C order), u64 count + f64 buffers (``named_buffers`` order),
    then CRC32 of everything before it. All little-endian."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    text = model.config.to_text().encode("utf-8")
    buf.write(struct.pack("<I", len(text)))
    buf.write(text)
    for arrays in ([p.data for _, p in model.named_parameters()], [b for _, b in model.named_buffers()]):
        flat = np.concatenate([np.asarray(a, dtype="<f8").ravel() for a in arrays]) if arrays else np.zeros(0)
        buf.write(struct.pack("<Q", flat.size))
        buf.write(flat.astype("<f8").tobytes())
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def save_checkpoint(path, model: DeepSenseModel) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def load_checkpoint(path) -> DeepSenseModel:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise CheckpointError("not a DeepSense checkpoint (bad magic)")
    body, crc = raw[:-4], struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError("checkpoint CRC mismatch")
    (version,) = struct.unpack_from("<I", body, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (n_text,) = struct.unpack_from("<I", body, 8)
    pos = 12
    config = DeepSenseConfig.from_text(body[pos:pos + n_text].decode("utf-8"))
    pos += n_text
    model = build(config, seed=0)
    for kind in ("parameters", "buffers"):
        (count,) = struct.unpack_from("<Q", body, pos)
        pos += 8
        flat = np.frombuffer(body, dtype="<f8", count=count, offset=pos).astype(np.float64)
        pos += 8 * count
        targets = model.named_parameters() if kind == "parameters" else model.named_buffers()
        expected = sum(np.size(t.data if isinstance(t, Tensor) else t) for _, t in targets)
        if expected != count:
            raise CheckpointError(f"{kind}: checkpoint holds {count} values, model needs {expected}")
        off = 0
        for name, t in targets:
            arr = t.data if isinstance(t, Tensor) else t
            chunk = flat[off:off + arr.size].reshape(arr.shape)
            off += arr.size
            if isinstance(t, Tensor):
                t.data[...] = chunk
            else:
                model.set_buffer(name, chunk.copy())
    if pos != len(body):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return model


def parameter_vector(model: Module) -> np.ndarray:
    return np.concatenate([p.data.ravel() for p in model.parameters()])
