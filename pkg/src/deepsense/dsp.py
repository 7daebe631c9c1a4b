"""Turn timestamped sensor streams into per-sensor frequency-domain tensors.

Tensor layout: ``data[d, 2f, T]``. Along the middle axis each retained frequency
bin ``j`` (``j = 0`` is DC) occupies two slots, ``2j`` = magnitude and
``2j + 1`` = phase in (-pi, pi]. A bin whose magnitude is numerically zero gets
phase 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Slack for floating-point interval arithmetic on timestamps (seconds).
_TIME_EPS = 1e-9


@dataclass
class SensorSeries:
    sensor_id: int
    values: np.ndarray  # (d, n)
    timestamps: np.ndarray  # (n,), seconds, nondecreasing

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64).reshape(-1)
        if self.values.shape[1] != self.timestamps.shape[0]:
            raise ValueError(
                f"sensor {self.sensor_id}: {self.values.shape[1]} value columns but "
                f"{self.timestamps.shape[0]} timestamps"
            )
        if self.values.shape[0] < 1:
            raise ValueError("sensor series needs at least one measurement axis")
        if self.timestamps.size and np.any(np.diff(self.timestamps) < 0):
            raise ValueError(f"sensor {self.sensor_id}: timestamps must be nondecreasing")

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def __len__(self) -> int:
        return self.timestamps.shape[0]


@dataclass
class IntervalSet:
    windows: list  # list of (values (d, m_t), timestamps (m_t,))
    widths: np.ndarray  # (T,), seconds

    @property
    def count(self) -> int:
        return len(self.windows)


@dataclass
class FreqTensor:
    sensor_id: int
    data: np.ndarray  # (d, 2f, T)
    widths: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def f(self) -> int:
        return self.data.shape[1] // 2

    @property
    def T(self) -> int:
        return self.data.shape[2]


def _duration(u: np.ndarray) -> float:
    if u.size < 2:
        return 0.0
    # each sample stands for one sampling period
    return float(u[-1] - u[0] + np.median(np.diff(u)))


def segment_intervals(series: SensorSeries, tau: float) -> IntervalSet:
    """Split ``series`` into consecutive non-overlapping windows of width ``tau``.

    The number of full windows is floor(duration / tau). A trailing partial window
    is kept (with its true width) when it is at least tau/2 long, otherwise dropped.
    """
    if tau <= 0:
        raise ValueError(f"interval width must be positive, got {tau}")
    if len(series) == 0:
        raise ValueError("cannot segment an empty series")
    u = series.timestamps
    total = _duration(u)
    if total + _TIME_EPS < tau:
        raise ValueError(f"input shorter than one interval ({total:.6g} s < tau={tau:g} s)")
    n_full = int(np.floor(total / tau + _TIME_EPS))
    tail = total - n_full * tau
    n_windows = n_full + (1 if tail + _TIME_EPS >= tau / 2 else 0)
    slot = np.floor((u - u[0]) / tau + _TIME_EPS).astype(int)
    windows, widths = [], []
    for k in range(n_windows):
        sel = slot == k
        windows.append((series.values[:, sel], u[sel]))
        widths.append(tau if k < n_full else tail)
    return IntervalSet(windows, np.asarray(widths))


def segment_by_boundaries(series: SensorSeries, boundaries) -> IntervalSet:
    """Windows delimited by explicit boundary times ``b[0] < b[1] < ...``.

    Window t holds samples with ``b[t] <= u < b[t+1]``; widths are ``diff(b)``.
    """
    b = np.asarray(boundaries, dtype=np.float64)
    if b.ndim != 1 or b.size < 2 or np.any(np.diff(b) <= 0):
        raise ValueError("boundaries must be a strictly increasing sequence of at least two times")
    u = series.timestamps
    windows = []
    for lo, hi in zip(b[:-1], b[1:]):
        sel = (u >= lo) & (u < hi)
        windows.append((series.values[:, sel], u[sel]))
    return IntervalSet(windows, np.diff(b))


def resample_window(values: np.ndarray, timestamps: np.ndarray, target_len: int) -> np.ndarray:
    """Linearly interpolate a window onto ``target_len`` evenly spaced instants.

    The new grid spans the window's own first to last timestamp.
    """
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    u = np.asarray(timestamps, dtype=np.float64)
    if u.size < 2:
        raise ValueError(f"resampling needs at least 2 samples, window has {u.size}")
    if target_len < 1:
        raise ValueError("target length must be positive")
    grid = np.linspace(u[0], u[-1], target_len)
    return np.vstack([np.interp(grid, u, row) for row in values])


def dft_window(window: np.ndarray, f: int) -> np.ndarray:
    """Interleaved (magnitude, phase) of the ``f`` lowest non-negative DFT bins per row.

    Unnormalized transform: ``X[j] = sum_t x[t] exp(-2 pi i j t / m)``.
    """
    window = np.atleast_2d(np.asarray(window, dtype=np.float64))
    d, m = window.shape
    if m < 1:
        raise ValueError("window has no samples")
    available = m // 2 + 1
    if not 1 <= f <= available:
        raise ValueError(f"f={f} bins requested but a {m}-sample window has {available}")
    spec = np.fft.rfft(window, axis=1)[:, :f]
    mag = np.abs(spec)
    phase = np.angle(spec)
    phase[phase <= -np.pi] += 2 * np.pi
    scale = 1e-12 * (1.0 + np.abs(window).sum(axis=1, keepdims=True))
    phase[mag <= scale] = 0.0
    out = np.empty((d, 2 * f))
    out[:, 0::2] = mag
    out[:, 1::2] = phase
    return out


def default_target_len(intervals: IntervalSet | list) -> int:
    """Median window sample count rounded up to the next power of two."""
    counts = [w[1].size for w in (intervals.windows if isinstance(intervals, IntervalSet) else intervals)]
    if not counts:
        raise ValueError("no windows")
    med = max(int(np.ceil(np.median(counts))), 2)
    return 1 << (med - 1).bit_length()


def default_bins(target_len: int) -> int:
    return target_len // 2 + 1


def assemble_tensor(intervals: IntervalSet, f: int | None = None, target_len: int | None = None,
                    sensor_id: int = 0) -> FreqTensor:
    """Resample each window to a common length, transform, and stack along T."""
    if intervals.count == 0:
        raise ValueError("no intervals to assemble")
    m = default_target_len(intervals) if target_len is None else target_len
    f = default_bins(m) if f is None else f
    dims = {w[0].shape[0] for w in intervals.windows}
    if len(dims) != 1:
        raise ValueError(f"inconsistent measurement dimension across windows: {sorted(dims)}")
    cols = [dft_window(resample_window(v, u, m), f) for v, u in intervals.windows]
    data = np.stack(cols, axis=2)
    return FreqTensor(sensor_id, data, np.asarray(intervals.widths, dtype=np.float64).copy())


def preprocess_series(series: SensorSeries, tau: float, f: int | None = None,
                      target_len: int | None = None) -> FreqTensor:
    return assemble_tensor(segment_intervals(series, tau), f, target_len, series.sensor_id)
