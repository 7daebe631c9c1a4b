import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deepsense import tensor as T
from deepsense.layers import (BatchNorm, ConvSubnet, GRULayer, RecurrentBatchNorm, StackedGRU,
                              append_interval_width, glorot_uniform, gru_step)

from oracles import central_diff, rel_err


def rng(seed=0):
    return np.random.default_rng(seed)


# -- conv subnets ------------------------------------------------------------

def test_individual_subnet_length():
    net = ConvSubnet(3, 20, (3, 3, 3), 64, rng())
    out = net(T.constant(rng(1).normal(size=(2, 1, 3, 20))), train=False)
    assert out.shape == (2, 64 * 14) and net.output_size == 896


def test_zero_input_zero_output():
    net = ConvSubnet(3, 20, (3, 3, 3), 8, rng())
    for train in (True, False):
        out = net(T.constant(np.zeros((4, 1, 3, 20))), train=train, track=False)
        assert np.all(out.data == 0.0)


def test_identical_params_identical_output():
    a, b = ConvSubnet(3, 20, (3, 3, 3), 8, rng(5)), ConvSubnet(3, 20, (3, 3, 3), 8, rng(5))
    x = T.constant(rng(2).normal(size=(1, 1, 3, 20)))
    assert np.array_equal(a(x, False).data, b(x, False).data)


def test_infeasible_width_reports_minimum():
    with pytest.raises(ValueError, match="at least 7"):
        ConvSubnet(3, 6, (3, 3, 3), 4, rng())


def test_merge_subnet_length():
    net = ConvSubnet(2, 896, (3, 3, 3), 64, rng())
    assert net.output_size == 64 * 890
    out = net(T.constant(rng(3).normal(size=(1, 1, 2, 896))), train=False)
    assert out.shape == (1, 64 * 890)


def test_merge_subnet_row_order_matters():
    net = ConvSubnet(2, 12, (3, 3, 3), 4, rng(4))
    x = rng(5).normal(size=(1, 1, 2, 12))
    a = net(T.constant(x), False).data
    b = net(T.constant(x[:, :, ::-1].copy()), False).data
    assert not np.array_equal(a, b)


def test_ragged_merge_input_rejected():
    net = ConvSubnet(2, 12, (3, 3, 3), 4, rng(4))
    with pytest.raises(T.ShapeError):
        net(T.constant(np.zeros((1, 1, 2, 11))), False)


def test_single_row_subnets_share_code_path():
    ind, merge = ConvSubnet(1, 15, (3, 3, 3), 4, rng(9)), ConvSubnet(1, 15, (3, 3, 3), 4, rng(9))
    x = T.constant(rng(10).normal(size=(3, 1, 1, 15)))
    assert np.array_equal(ind(x, True, track=False).data, merge(x, True, track=False).data)


# -- interval width ----------------------------------------------------------

def test_append_interval_width():
    out = append_interval_width(np.arange(10.0), 0.25)
    assert out.shape == (11,) and out.data[-1] == 0.25
    again = append_interval_width(np.arange(10.0), 0.25)
    assert np.array_equal(out.data, again.data)
    batch = append_interval_width(np.zeros((3, 4)), [0.1, 0.2, 0.3])
    assert np.array_equal(batch.data[:, -1], [0.1, 0.2, 0.3])


# -- batch norm --------------------------------------------------------------

@given(st.integers(8, 20), st.integers(0, 1000))
def test_batch_norm_train_statistics(n, seed):
    r = rng(seed)
    bn = BatchNorm(3)
    bn.gamma.data[:] = r.uniform(0.5, 2, 3)
    bn.beta.data[:] = r.normal(size=3)
    x = r.normal(size=(n, 3)) * r.uniform(0.5, 5, 3) + r.normal(size=3)
    y = bn(T.constant(x), train=True).data
    assert np.allclose(y.mean(axis=0), bn.beta.data, atol=1e-6)
    # eps in the denominator shrinks the variance slightly
    var = x.var(axis=0)
    assert np.allclose(y.var(axis=0), bn.gamma.data ** 2 * var / (var + bn.eps), atol=1e-6)


def test_batch_norm_running_stats():
    bn = BatchNorm(2)
    x = np.array([[1.0, 2.0], [3.0, 6.0]])
    bn(T.constant(x), train=True)
    assert np.allclose(bn.running_mean, 0.1 * x.mean(axis=0))
    assert np.allclose(bn.running_var, 0.9 + 0.1 * x.var(axis=0, ddof=1))
    assert np.all(bn.running_var >= 0)


def test_masked_batch_norm_ignores_padding():
    bn = BatchNorm(2)
    x = rng(1).normal(size=(4, 2))
    y_masked = bn(T.constant(np.vstack([x, 100 * np.ones((2, 2))])), True, mask=[1, 1, 1, 1, 0, 0], track=False)
    y_plain = bn(T.constant(x), True, track=False)
    assert np.allclose(y_masked.data[:4], y_plain.data, atol=1e-12)


# -- GRU ---------------------------------------------------------------------

def zero_layer(n_in, hidden):
    layer = GRULayer(n_in, hidden, 4, rng())
    for p in (layer.w_z, layer.w_r, layer.w_h):
        p.data[:] = 0.0
    return layer


def test_gru_step_zero_weights():
    layer = zero_layer(3, 4)
    h = gru_step(np.ones(3), np.zeros(4), layer)
    assert np.all(h.data == 0.0)


def test_gru_chain_gradient():
    layer = GRULayer(2, 3, 5, rng(2))
    xs = rng(3).uniform(-1, 1, size=(5, 4, 2))
    w0 = layer.w_h.data.copy()

    def loss_for(w):
        layer.w_h.data[:] = w
        h = T.constant(np.zeros((4, 3)))
        for t in range(5):
            h = layer.step(T.constant(xs[t]), h, t, train=True, track=False)
        return T.sum(h * T.constant(np.linspace(-1, 1, 12).reshape(4, 3)))

    layer.zero_grad()
    loss_for(w0).backward()
    analytic = layer.w_h.grad.copy()
    numeric = central_diff(lambda w: loss_for(w).item(), w0)
    layer.w_h.data[:] = w0
    assert rel_err(analytic, numeric, floor=1e-6) < 1e-4


@given(st.integers(0, 10_000))
def test_gru_hidden_bounded(seed):
    layer = GRULayer(3, 5, 10, rng(seed))
    h = T.constant(np.zeros((2, 5)))
    xs = rng(seed + 1).normal(scale=3.0, size=(10, 2, 3))
    for t in range(10):
        h = layer.step(T.constant(xs[t]), h, t, train=False)
        assert np.all(np.abs(h.data) < 1.0)


def test_gru_dimension_mismatch():
    layer = GRULayer(3, 4, 2, rng())
    with pytest.raises(T.ShapeError):
        layer.step(T.constant(np.zeros((1, 2))), T.constant(np.zeros((1, 4))), 0, False)


def test_stacked_single_step_equals_chained_steps():
    gru = StackedGRU(3, 4, 2, 3, 0.0, rng(5))
    x = T.constant(rng(6).normal(size=(2, 3)))
    out = gru([x], train=False)[0]
    h1 = gru_step(x, np.zeros((2, 4)), gru.layers[0])
    h2 = gru_step(h1, np.zeros((2, 4)), gru.layers[1])
    assert np.array_equal(out.data, h2.data)


def test_incremental_equals_batch():
    gru = StackedGRU(3, 4, 2, 6, 0.5, rng(7))
    xs = [T.constant(v) for v in rng(8).normal(size=(6, 2, 3))]
    gru(xs, train=True, rng=rng(0))  # populate running statistics
    batch = gru(xs, train=False)
    state = gru.init_state(2)
    for t, x in enumerate(xs):
        out, state = gru.step(x, state, t)
        assert np.array_equal(out.data, batch[t].data)


def test_dropout_mask_reproducible():
    gru = StackedGRU(3, 4, 2, 3, 0.5, rng(9))
    xs = [T.constant(v) for v in rng(10).normal(size=(3, 8, 3))]
    a = gru(xs, True, rng(42), track=False)
    b = gru(xs, True, rng(42), track=False)
    c = gru(xs, True, rng(43), track=False)
    assert all(np.array_equal(u.data, v.data) for u, v in zip(a, b))
    assert not all(np.array_equal(u.data, v.data) for u, v in zip(a, c))


def test_dropout_rate_validated():
    with pytest.raises(ValueError):
        StackedGRU(3, 4, 2, 3, 1.0, rng())


@given(st.integers(0, 4), st.integers(0, 1000))
def test_stacked_gru_causal(t_mod, seed):
    gru = StackedGRU(2, 3, 2, 5, 0.0, rng(seed))
    xs = rng(seed + 1).normal(size=(5, 1, 2))
    base = gru([T.constant(v) for v in xs], train=False)
    xs2 = xs.copy()
    xs2[t_mod:] += 1.0
    mod = gru([T.constant(v) for v in xs2], train=False)
    for t in range(t_mod):
        assert np.array_equal(base[t].data, mod[t].data)


def test_glorot_range():
    w = glorot_uniform(rng(), (50, 70), 50, 70)
    assert np.max(np.abs(w)) <= np.sqrt(6 / 120)


def test_cumulative_running_stats_average_batches():
    rng = np.random.default_rng(3)
    bn = BatchNorm(4)
    bn.start_cumulative()
    xs = [rng.normal(size=(6, 4)) + k for k in range(3)]
    for x in xs:
        bn(T.constant(x), train=True)
    assert np.allclose(bn.running_mean, np.mean([x.mean(0) for x in xs], axis=0), rtol=0, atol=1e-12)
    assert np.allclose(bn.running_var, np.mean([x.var(0, ddof=1) for x in xs], axis=0), rtol=0, atol=1e-12)
    rbn = RecurrentBatchNorm(4, 3)
    rbn.start_cumulative()
    rbn(T.constant(xs[0]), 0, train=True)
    rbn(T.constant(xs[1]), 0, train=True)
    rbn(T.constant(xs[2]), 2, train=True)
    assert np.allclose(rbn.running_mean[0], (xs[0].mean(0) + xs[1].mean(0)) / 2, atol=1e-12)
    assert np.allclose(rbn.running_mean[2], xs[2].mean(0), atol=1e-12)
    assert np.array_equal(rbn.running_mean[1], np.zeros(4))
