import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deepsense import tensor as T
from deepsense.data import Sample, toy_classification_samples
from deepsense.layers import modules
from deepsense.model import build
from deepsense.training import (Adam, CarTrackLossParams, CheckpointError, DivergedError, LossSpec, OptimConfig,
                                cartrack_loss, checkpoint_bytes, clip_grad_norm, collate, cosine_penalty,
                                cross_entropy, gaussian_nll_terms, gradient_check_model, load_checkpoint,
                                micro_batch, micro_config, mse, objective, parameter_vector,
                                recalibrate_batch_norm, save_checkpoint, train)

from oracles import central_diff


def grad_wrt(fn, x):
    p = T.parameter(np.array(x, dtype=float))
    fn(p).backward()
    return p.grad


# -- cross entropy -------------------------------------------------------------

def test_cross_entropy_confident_match_is_zero():
    logits = np.array([[0.0, 800.0, 0.0]])
    assert cross_entropy(logits, [1]).item() == 0.0


def test_cross_entropy_uniform_six():
    assert abs(cross_entropy(np.zeros((1, 6)), [2]).item() - math.log(6)) < 1e-12


def test_cross_entropy_gradient_is_softmax_minus_onehot():
    logits = np.random.default_rng(0).normal(size=(1, 4))
    y = np.array([[0, 0, 1, 0]], dtype=float)
    g = grad_wrt(lambda p: cross_entropy(p, y), logits)
    p = np.exp(logits) / np.exp(logits).sum()
    assert np.allclose(g, p - y, atol=1e-12)
    num = central_diff(lambda v: cross_entropy(v, y).item(), logits)
    assert np.max(np.abs(g - num)) < 1e-8


def test_cross_entropy_finite_for_huge_logits():
    assert np.isfinite(cross_entropy(np.array([[1e300, -1e300]]), [1]).item())


def test_cross_entropy_dimension_mismatch():
    with pytest.raises(ValueError):
        cross_entropy(np.zeros((2, 3)), np.zeros((2, 4)))


# -- mse -----------------------------------------------------------------------

def test_mse_examples():
    x = np.random.default_rng(1).normal(size=(2, 2))
    assert mse(x, x).item() == 0.0
    assert mse(x + 1.0, x).item() == 1.0
    with pytest.raises(ValueError):
        mse(np.zeros(3), np.zeros(4))


def test_mse_gradient():
    rng = np.random.default_rng(2)
    p, t = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    g = grad_wrt(lambda v: mse(v, t), p)
    assert np.allclose(g, 2 * (p - t) / p.size, atol=1e-14)
    assert np.max(np.abs(g - central_diff(lambda v: mse(v, t).item(), p))) < 1e-8


# -- cartrack loss ---------------------------------------------------------------

def test_cartrack_nll_at_mean():
    t = 5
    y = np.random.default_rng(3).normal(size=(t, 2))
    loss = cartrack_loss(y, y, np.tile(np.eye(2), (t, 1, 1)))
    assert abs(loss.item() - t * math.log(2 * math.pi)) < 1e-12


@given(st.floats(0.01, 100), st.floats(0.01, 3.0))
def test_parallel_prediction_no_penalty(scale, theta):
    y = np.array([[1.0, 2.0], [-3.0, 0.5]])
    assert cosine_penalty(scale * y, y, theta).item() == 0.0


def test_antiparallel_penalty():
    y = np.array([[1.0, 2.0]])
    pen = cosine_penalty(-y, y, math.pi / 6).item()
    assert abs(pen - (math.cos(math.pi / 6) + 1)) < 1e-12
    assert abs(pen - 1.8660254) < 1e-7


def test_zero_vector_has_no_direction():
    pred = T.parameter(np.array([[0.0, 0.0], [1.0, 0.0]]))
    mean = np.array([[1.0, 0.0], [0.0, 0.0]])
    pen = cosine_penalty(pred, mean, math.pi / 6)
    assert pen.item() == 0.0
    pen.backward()
    assert np.all(np.isfinite(pred.grad)) and np.all(pred.grad == 0.0)


def test_non_spd_covariance_rejected():
    y = np.zeros((1, 2))
    with pytest.raises(ValueError):
        gaussian_nll_terms(y, y, np.array([[[1.0, 2.0], [2.0, 1.0]]]))


@given(st.floats(-math.pi, math.pi), st.integers(0, 1000))
def test_cartrack_rotation_invariance(angle, seed):
    rng = np.random.default_rng(seed)
    pred, mean = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
    cov = rng.uniform(0.5, 3, size=4)[:, None, None] * np.eye(2)
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    a = cartrack_loss(pred, mean, cov, CarTrackLossParams(0.7, 0.4)).item()
    b = cartrack_loss(pred @ rot.T, mean @ rot.T, cov, CarTrackLossParams(0.7, 0.4)).item()
    assert abs(a - b) < 1e-9 * (1 + abs(a))


@given(st.floats(0.0, 3.1), st.floats(0.05, 3.1))
def test_hinge_zero_iff_within_margin(angle, theta):
    pred = np.array([[math.cos(angle), math.sin(angle)]])
    pen = cosine_penalty(pred, np.array([[1.0, 0.0]]), theta).item()
    if angle < theta - 1e-9:
        assert pen == 0.0
    elif angle > theta + 1e-9:
        assert pen > 0.0


def test_zero_lambda_reduces_to_nll():
    rng = np.random.default_rng(4)
    pred, mean = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    cov = np.tile(np.eye(2) * 2.0, (3, 1, 1))
    g0 = grad_wrt(lambda p: cartrack_loss(p, mean, cov, CarTrackLossParams(0.0)), pred)
    g1 = grad_wrt(lambda p: gaussian_nll_terms(p, mean, cov), pred)
    assert np.array_equal(g0, g1)
    loss = gaussian_nll_terms(pred, mean, cov)
    assert objective(loss, [(0.0, cosine_penalty(pred, mean, 0.5))]).item() == loss.item()


def test_cartrack_gradient():
    rng = np.random.default_rng(5)
    pred, mean = rng.normal(size=(2, 3, 2)), rng.normal(size=(2, 3, 2))
    a = rng.normal(size=(2, 3, 2, 2))
    cov = a @ np.swapaxes(a, -1, -2) + np.eye(2)
    fn = lambda p: cartrack_loss(p, mean, cov, CarTrackLossParams(1.0, math.pi / 6))
    num = central_diff(lambda v: fn(v).item(), pred)
    assert np.max(np.abs(grad_wrt(fn, pred) - num)) < 1e-7


def test_loss_params_validated():
    with pytest.raises(ValueError):
        CarTrackLossParams(-1.0)
    with pytest.raises(ValueError):
        CarTrackLossParams(1.0, math.pi)


# -- optimizer -----------------------------------------------------------------

def test_adam_zero_lr_is_identity():
    p = T.parameter(np.random.default_rng(6).normal(size=5))
    before = p.data.copy()
    p.grad = np.ones(5)
    opt = Adam([p], lr=0.0)
    opt.step()
    assert np.array_equal(p.data, before)


def test_adam_first_step_magnitude():
    p = T.parameter(np.zeros(3))
    p.grad = np.array([0.1, -2.0, 30.0])
    Adam([p], lr=0.01).step()
    assert np.allclose(p.data, -0.01 * np.sign(p.grad), atol=1e-8)


def test_adam_moment_shapes():
    ps = [T.parameter(np.zeros((2, 3))), T.parameter(np.zeros(4))]
    opt = Adam(ps)
    assert [m.shape for m in opt.m] == [(2, 3), (4,)] and [v.shape for v in opt.v] == [(2, 3), (4,)]


def test_clip_grad_norm():
    p = T.parameter(np.zeros(2))
    p.grad = np.array([3.0, 4.0])
    assert clip_grad_norm([p], 1.0) == 5.0
    assert abs(np.linalg.norm(p.grad) - 1.0) < 1e-9


# -- batching ------------------------------------------------------------------

def test_collate_pads_and_masks():
    def s(t, label):
        return Sample([np.ones((3, 4, t))], np.full(t, 0.25), label=label)

    b = collate([s(2, 0), s(4, 1)])
    assert b.inputs[0].shape == (2, 3, 4, 4)
    assert np.array_equal(b.mask, [[1, 1, 0, 0], [1, 1, 1, 1]])
    assert np.all(b.inputs[0][0, :, :, 2:] == 0)
    assert collate([s(3, 0), s(3, 1)]).mask is None


def test_padding_does_not_change_loss():
    cfg = micro_config("full", "regression").replace(dropout=0.0)
    model = build(cfg, 1)
    mb = micro_batch(cfg, batch=2, seed=3)
    samples = [Sample([x[i] for x in mb.inputs], mb.widths[i], target_mean=mb.target_mean[i],
                      target_cov=mb.target_cov[i]) for i in range(2)]
    from deepsense.training import batch_loss
    spec = LossSpec("cartrack")
    short = Sample([x[..., :2] for x in samples[1].inputs], samples[1].widths[:2],
                   target_mean=samples[1].target_mean[:2], target_cov=samples[1].target_cov[:2])
    alone, _ = batch_loss(model, collate([short]), spec, train=False)
    padded_batch = collate([short, samples[0]])
    both, _ = batch_loss(model, padded_batch, spec, train=False)
    other, _ = batch_loss(model, collate([samples[0]]), spec, train=False)
    assert abs(both.item() - (alone.item() + other.item()) / 2) < 1e-9


# -- gradient check --------------------------------------------------------------

@pytest.mark.parametrize("task", ["classification", "regression"])
def test_gradient_check_micro_sampled(task):
    cfg = micro_config("full", task)
    spec = LossSpec("cross_entropy") if task == "classification" else LossSpec("cartrack", 1.0, math.pi / 6)
    report = gradient_check_model(build(cfg, 0), micro_batch(cfg), spec, max_entries=6)
    assert report.passed, report.summary()
    assert report.max_rel_err < 1e-4


def test_gradient_check_flags_corrupted_rule():
    cfg = micro_config("full", "classification")
    orig = T._UNARY["sigmoid"]
    T._UNARY["sigmoid"] = (orig[0], lambda x, y: y)  # wrong: should be y * (1 - y)
    try:
        report = gradient_check_model(build(cfg, 0), micro_batch(cfg), LossSpec("cross_entropy"), max_entries=4)
    finally:
        T._UNARY["sigmoid"] = orig
    assert not report.passed
    assert any("gru" in f[0] for f in report.failures)


def test_zero_lambda_gradients_match_nll_only():
    cfg = micro_config("full", "regression")
    batch = micro_batch(cfg)
    grads = []
    for spec in (LossSpec("cartrack", 0.0), LossSpec("cartrack", 0.0, 1.0)):
        model = build(cfg, 0)
        from deepsense.training import batch_loss
        loss, _ = batch_loss(model, batch, spec, train=True, rng=np.random.default_rng(0), track=False)
        loss.backward()
        grads.append(np.concatenate([p.grad.ravel() for p in model.parameters()]))
    assert np.array_equal(grads[0], grads[1])


# -- training loop -------------------------------------------------------------

def _toy(n=8):
    return toy_classification_samples(n=n, seed=0)


def _toy_model(seed=0):
    return build(micro_config("full", "classification").replace(dims=(3, 3), f=5, T=20, n_classes=2), seed)


def test_train_deterministic_and_logs(tmp_path):
    runs = []
    for i in range(2):
        log = tmp_path / f"log{i}.jsonl"
        res = train(_toy_model(), _toy(), LossSpec(), OptimConfig(batch_size=4), epochs=2, seed=5, log_path=log)
        runs.append((log.read_text(), parameter_vector(res.model)))
    assert runs[0][0] == runs[1][0]
    assert np.array_equal(runs[0][1], runs[1][1])
    recs = [json.loads(line) for line in runs[0][0].splitlines()]
    assert [r["epoch"] for r in recs] == [1, 2]
    assert set(recs[0]) == {"epoch", "split", "loss", "metric"}


def test_train_divergence_reports_batch():
    model = _toy_model()
    model.head.bias.data[:] = np.nan
    with pytest.raises(DivergedError) as info:
        train(model, _toy(), LossSpec(), OptimConfig(batch_size=4), epochs=1)
    assert info.value.batch == 0 and "diverged" in str(info.value)


def test_train_empty_dataset():
    with pytest.raises(ValueError):
        train(_toy_model(), [], LossSpec())


def test_train_early_stop():
    res = train(_toy_model(), _toy(), LossSpec(), OptimConfig(batch_size=4), epochs=5,
                on_epoch=lambda epoch, recs: epoch == 2)
    assert len(res.log) == 2


# -- checkpoint ----------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    cfg = micro_config("noMergeConv", "regression")
    model = build(cfg, 3)
    model.gru.layers[0].bn_z.running_mean[:] = 0.5
    path = tmp_path / "m.dsns"
    save_checkpoint(path, model)
    back = load_checkpoint(path)
    assert back.config == cfg
    assert np.array_equal(parameter_vector(back), parameter_vector(model))
    assert checkpoint_bytes(back) == checkpoint_bytes(model)
    raw = path.read_bytes()
    assert raw[:4] == b"DSNS" and int.from_bytes(raw[4:8], "little") == 1


def test_checkpoint_corruption_detected(tmp_path):
    path = tmp_path / "m.dsns"
    save_checkpoint(path, build(micro_config(), 0))
    raw = bytearray(path.read_bytes())
    raw[40] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="CRC"):
        load_checkpoint(path)
    path.write_bytes(b"NOPE" + bytes(raw[4:]))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_recalibration_keeps_weights_and_is_deterministic():
    samples = _toy(6)
    a, b = _toy_model(1), _toy_model(1)
    before = parameter_vector(a)
    recalibrate_batch_norm(a, samples, 4)
    recalibrate_batch_norm(b, samples, 4)
    assert np.array_equal(parameter_vector(a), before)
    assert checkpoint_bytes(a) == checkpoint_bytes(b)
    assert checkpoint_bytes(a) != checkpoint_bytes(_toy_model(1))
    assert all(m.momentum == 0.9 for m in modules(a) if hasattr(m, "momentum"))
