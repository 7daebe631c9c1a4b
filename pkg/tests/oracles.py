"""Independent reference implementations used as test oracles."""

import math
from fractions import Fraction

import numpy as np


def central_diff(fn, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Numerical gradient of scalar ``fn`` at ``x`` (perturbs a copy)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        hi = fn(x)
        flat[i] = old - step
        lo = fn(x)
        flat[i] = old
        gf[i] = (hi - lo) / (2 * step)
    return g


def rel_err(a, b, floor: float = 1e-8) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def naive_dft(x: np.ndarray) -> np.ndarray:
    """O(m^2) DFT of a 1-D signal, full spectrum."""
    m = x.shape[0]
    out = np.zeros(m, dtype=np.complex128)
    for j in range(m):
        acc = 0j
        for t in range(m):
            ang = -2.0 * np.pi * j * t / m
            acc += x[t] * complex(np.cos(ang), np.sin(ang))
        out[j] = acc
    return out


def naive_matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for p in range(k):
                s += a[i, p] * b[p, j]
            out[i, j] = s
    return out


def naive_conv(x, w, b=None):
    """Loop cross-correlation: x (C,H,W), w (F,C,fh,fw) -> (F, H-fh+1, W-fw+1)."""
    c, h, wd = x.shape
    f, _, fh, fw = w.shape
    out = np.zeros((f, h - fh + 1, wd - fw + 1))
    for o in range(f):
        for i in range(h - fh + 1):
            for j in range(wd - fw + 1):
                s = 0.0
                for ci in range(c):
                    for a in range(fh):
                        for bb in range(fw):
                            s += x[ci, i + a, j + bb] * w[o, ci, a, bb]
                out[o, i, j] = s + (0.0 if b is None else b[o])
    return out


def brute_metrics(y_true, y_pred, n_classes):
    """Accuracy and per-class / macro / micro F1 by explicit counting in exact rationals."""
    n = len(y_true)
    pairs = list(zip(y_true, y_pred))
    correct = sum(1 for a, b in pairs if a == b)
    f1 = []
    tp_all = fp_all = fn_all = 0
    for c in range(n_classes):
        tp = sum(1 for a, b in pairs if a == c and b == c)
        fp = sum(1 for a, b in pairs if a != c and b == c)
        fn = sum(1 for a, b in pairs if a == c and b != c)
        tp_all, fp_all, fn_all = tp_all + tp, fp_all + fp, fn_all + fn
        p = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
        r = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
        f1.append(2 * p * r / (p + r) if p + r else Fraction(0))
    micro = Fraction(2 * tp_all, 2 * tp_all + fp_all + fn_all)
    return {
        "accuracy": float(Fraction(correct, n)),
        "f1": [float(v) for v in f1],
        "macro_f1": math.fsum(float(v) for v in f1) / n_classes,
        "micro_f1": float(micro),
    }
