import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deepsense import _kernels_py, kernels

try:
    from deepsense import _kernels as compiled
except ImportError:  # extension not built
    compiled = None

needs_ext = pytest.mark.skipif(compiled is None, reason="compiled kernels not built")


def naive_unfold(x, fh, fw):
    n, c, h, w = x.shape
    out = np.zeros((n, h - fh + 1, w - fw + 1, c * fh * fw))
    for b in range(n):
        for i in range(h - fh + 1):
            for j in range(w - fw + 1):
                out[b, i, j] = x[b, :, i:i + fh, j:j + fw].reshape(-1)
    return out


shapes = st.tuples(st.integers(1, 2), st.integers(1, 3), st.integers(1, 5), st.integers(1, 7),
                   st.integers(1, 5), st.integers(1, 7))


def _case(s, seed=0):
    n, c, h, w, fh, fw = s
    fh, fw = min(fh, h), min(fw, w)
    return np.random.default_rng(seed).normal(size=(n, c, h, w)), fh, fw


@given(shapes)
def test_unfold_matches_loops(s):
    x, fh, fw = _case(s)
    assert np.array_equal(kernels.unfold(x, fh, fw), naive_unfold(x, fh, fw))


@given(shapes)
def test_fold_is_adjoint_of_unfold(s):
    x, fh, fw = _case(s)
    cols = np.random.default_rng(1).normal(size=kernels.unfold(x, fh, fw).shape)
    lhs = np.sum(kernels.unfold(x, fh, fw) * cols)
    rhs = np.sum(x * kernels.fold(cols, x.shape[1], fh, fw))
    assert abs(lhs - rhs) < 1e-10 * (1 + abs(lhs))


@needs_ext
@given(shapes)
def test_backends_agree(s):
    x, fh, fw = _case(s)
    a = _kernels_py.unfold(x, fh, fw)
    assert np.array_equal(a, compiled.unfold(x, fh, fw))
    assert np.allclose(_kernels_py.fold(a, x.shape[1], fh, fw), compiled.fold(a, x.shape[1], fh, fw),
                       rtol=0, atol=1e-12)


@needs_ext
def test_strapdown_backends_agree():
    rng = np.random.default_rng(3)
    n = 500
    t = np.cumsum(rng.uniform(0.005, 0.015, n))
    acc = rng.normal(size=(n, 3)) + [0, 0, 9.81]
    gz, mh = rng.normal(size=n) * 0.1, rng.normal(size=n)
    p1, h1 = _kernels_py.strapdown(t, acc, gz, mh, 9.81, 0.02, 0.3)
    p2, h2 = compiled.strapdown(t, acc, gz, mh, 9.81, 0.02, 0.3)
    assert np.allclose(p1, p2, rtol=0, atol=1e-9) and np.allclose(h1, h2, rtol=0, atol=1e-12)


def test_strapdown_constant_acceleration():
    # level device, heading 0, constant forward specific force -> x = a t^2 / 2
    t = np.linspace(0, 2, 201)
    acc = np.tile([0.0, 1.5, 9.81], (t.size, 1))
    pos, psi = kernels.strapdown(t, acc, np.zeros(t.size), np.zeros(t.size), 9.81, 0.0, 0.0)
    assert np.allclose(psi, 0.0)
    assert np.allclose(pos[:, 1], 0.75 * t ** 2, atol=1e-12)
    assert np.allclose(pos[:, [0, 2]], 0.0, atol=1e-12)


def test_backend_name():
    assert kernels.BACKEND in ("cython", "python")
