"""HHAR-style activity recordings: CSV ingestion, sample cutting, evaluation splits."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ..dsp import IntervalSet, SensorSeries, assemble_tensor, default_bins, default_target_len
from .samples import Sample

HHAR_COLUMNS = ["Index", "Arrival_Time", "Creation_Time", "x", "y", "z", "User", "Model", "Device", "gt"]
ACTIVITIES = ("biking", "sitting", "standing", "walking", "climbStair-up", "climbStair-down")
USERS = tuple("abcdefghi")
HHAR_SENSORS = ("accelerometer", "gyroscope")

# spellings used by the public dataset's gt column
_LABEL_ALIASES = {
    "bike": "biking", "sit": "sitting", "stand": "standing", "walk": "walking",
    "stairsup": "climbStair-up", "stairsdown": "climbStair-down",
}


class HHARRecord(NamedTuple):
    user: str
    device: str
    activity: str
    sensor: str
    timestamp: float  # s
    x: float
    y: float
    z: float


class RecordList(list):
    """A list of records that also remembers how many rows were dropped while parsing."""

    def __init__(self, items=(), dropped: int = 0):
        super().__init__(items)
        self.dropped = dropped


def normalise_activity(label: str) -> str | None:
    label = label.strip()
    if label in ACTIVITIES:
        return label
    return _LABEL_ALIASES.get(label)


def _sensor_from_name(path: Path) -> str | None:
    name = path.name.lower()
    for s in HHAR_SENSORS:
        if s in name:
            return s
    return None


def load_hhar_csv(path, sensor: str | None = None, time_unit: float = 1e-9) -> RecordList:
    """Parse one HHAR CSV file.

    The sensor is taken from ``sensor`` or else from the file name. Timestamps
    come from ``Creation_Time`` scaled by ``time_unit`` (nanoseconds by default).
    Rows with missing/unparseable fields, an unknown user, or an activity outside
    the six labels (including the dataset's 'null') are dropped and counted.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    sensor = sensor or _sensor_from_name(path)
    if sensor not in HHAR_SENSORS:
        raise ValueError(f"cannot tell sensor for {path.name}; pass one of {HHAR_SENSORS}")
    out = RecordList()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != HHAR_COLUMNS:
            raise ValueError(f"malformed header {header!r}; expected columns {HHAR_COLUMNS}")
        for row in reader:
            if len(row) != len(HHAR_COLUMNS):
                out.dropped += 1
                continue
            act = normalise_activity(row[9])
            user = row[6].strip()
            if act is None or user not in USERS or not row[8].strip():
                out.dropped += 1
                continue
            try:
                ts = float(row[2]) * time_unit
                x, y, z = float(row[3]), float(row[4]), float(row[5])
            except ValueError:
                out.dropped += 1
                continue
            if not np.isfinite([ts, x, y, z]).all():
                out.dropped += 1
                continue
            out.append(HHARRecord(user, row[8].strip(), act, sensor, ts, x, y, z))
    return out


def write_hhar_csv(path, records, time_unit: float = 1e-9) -> None:
    """Write records of one sensor in the HHAR column layout (Model column mirrors Device)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HHAR_COLUMNS)
        for i, r in enumerate(records):
            ts = repr(float(r.timestamp) / time_unit)
            xyz = [repr(float(v)) for v in (r.x, r.y, r.z)]
            w.writerow([i, ts, ts, *xyz, r.user, r.device, r.device, r.activity])


def _series(recs: list, sensor_id: int) -> SensorSeries:
    recs = sorted(recs, key=lambda r: r.timestamp)
    t = np.array([r.timestamp for r in recs])
    v = np.array([[r.x, r.y, r.z] for r in recs]).T
    # duplicate timestamps would break interpolation; keep the first reading
    keep = np.concatenate([[True], np.diff(t) > 0])
    return SensorSeries(sensor_id, v[:, keep].copy(), t[keep])


def _slice(series: SensorSeries, lo: float, hi: float) -> SensorSeries:
    sel = (series.timestamps >= lo) & (series.timestamps < hi)
    return SensorSeries(series.sensor_id, series.values[:, sel], series.timestamps[sel])


class SampleSet(list):
    def __init__(self, items=(), skipped: int = 0, target_len: int = 0, f: int = 0):
        super().__init__(items)
        self.skipped = skipped
        self.target_len = target_len
        self.f = f


def make_samples(records, tau: float = 0.25, sample_len: float = 5.0, label: str = "activity",
                 f: int | None = None, target_len: int | None = None,
                 sensors: tuple = HHAR_SENSORS) -> SampleSet:
    """Cut per-(user, device, activity) recordings into fixed-length multi-sensor samples.

    Windows start at the later of the sensors' first readings and advance by
    ``sample_len``; a window is emitted only if every sensor covers it with at
    least two readings in each tau-interval, otherwise it is skipped and counted.
    ``label`` selects the class: the activity index or the user index.
    """
    if label not in ("activity", "user"):
        raise ValueError("label must be 'activity' or 'user'")
    n_int = int(round(sample_len / tau))
    if abs(n_int * tau - sample_len) > 1e-9:
        raise ValueError("sample_len must be a whole number of intervals")
    groups = defaultdict(lambda: defaultdict(list))
    for r in records:
        groups[(r.user, r.device, r.activity)][r.sensor].append(r)

    cut = []  # (key, start, [IntervalSet per sensor])
    skipped = 0
    for key in sorted(groups):
        by_sensor = groups[key]
        if any(s not in by_sensor for s in sensors):
            skipped += 1
            continue
        series = [_series(by_sensor[s], k) for k, s in enumerate(sensors)]
        spacing = [float(np.median(np.diff(s.timestamps))) if len(s) > 1 else 0.0 for s in series]
        t0 = max(s.timestamps[0] for s in series)
        t_end = min(s.timestamps[-1] + sp for s, sp in zip(series, spacing))
        n_win = int(np.floor((t_end - t0) / sample_len + 1e-9))
        for w in range(n_win):
            lo = t0 + w * sample_len
            hi = lo + sample_len
            ivs = []
            for s in series:
                part = _slice(s, lo, hi)
                if len(part) < 2:
                    break
                # intervals are anchored at the window start, not the first reading
                iv = _grid_intervals(part, lo, tau, n_int)
                if iv is None:
                    break
                ivs.append(iv)
            if len(ivs) != len(series):
                skipped += 1
                continue
            cut.append((key, lo, ivs))

    if not cut:
        return SampleSet([], skipped, target_len or 0, f or 0)
    m = target_len or default_target_len([w for _, _, ivs in cut for iv in ivs for w in iv.windows])
    f = f or default_bins(m)
    out = SampleSet([], skipped, m, f)
    for (user, device, activity), lo, ivs in cut:
        inputs = [assemble_tensor(iv, f, m, k).data for k, iv in enumerate(ivs)]
        y = ACTIVITIES.index(activity) if label == "activity" else USERS.index(user)
        out.append(Sample(inputs, np.full(n_int, tau), label=y,
                          meta={"user": user, "device": device, "activity": activity, "start": float(lo)}))
    return out


def _grid_intervals(series: SensorSeries, lo: float, tau: float, n_int: int):
    slot = np.floor((series.timestamps - lo) / tau + 1e-9).astype(int)
    windows = []
    for k in range(n_int):
        sel = slot == k
        if sel.sum() < 2:
            return None
        windows.append((series.values[:, sel], series.timestamps[sel]))
    return IntervalSet(windows, np.full(n_int, tau))


def split(samples, scheme: str, user: str | None = None, k: int = 10, fold: int = 0, seed: int = 0):
    """Partition samples into (train, test).

    ``scheme='loso'``: every sample of ``user`` goes to test.
    ``scheme='kfold'``: stratified by label; each label's samples are shuffled
    with ``seed`` and dealt round-robin (continuing a global counter across
    labels) so per-label fold counts differ by at most one.
    """
    samples = list(samples)
    if scheme == "loso":
        users = {s.meta.get("user") for s in samples}
        if user not in users:
            raise ValueError(f"unknown user {user!r}; present: {sorted(u for u in users if u)}")
        test = [s for s in samples if s.meta.get("user") == user]
        train = [s for s in samples if s.meta.get("user") != user]
        return train, test
    if scheme == "kfold":
        if k < 2 or not 0 <= fold < k:
            raise ValueError(f"need k >= 2 and 0 <= fold < k, got k={k}, fold={fold}")
        assign = kfold_assignment([s.label for s in samples], k, seed)
        train = [s for s, a in zip(samples, assign) if a != fold]
        test = [s for s, a in zip(samples, assign) if a == fold]
        return train, test
    raise ValueError(f"unknown split scheme {scheme!r}; use 'loso' or 'kfold'")


def kfold_assignment(labels, k: int, seed: int = 0) -> np.ndarray:
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    out = np.empty(labels.size, dtype=int)
    counter = 0
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        idx = idx[rng.permutation(idx.size)]
        out[idx] = (counter + np.arange(idx.size)) % k
        counter += idx.size
    return out


# -- synthetic stand-in --------------------------------------------------------

_ACTIVITY_SIGNATURE = {
    # (dominant frequency Hz, accel amplitude m/s^2, gyro amplitude rad/s, tilt rad)
    "biking": (1.3, 2.0, 0.6, 0.4),
    "sitting": (0.0, 0.05, 0.02, 1.2),
    "standing": (0.0, 0.08, 0.03, 0.0),
    "walking": (1.9, 3.0, 1.0, 0.1),
    "climbStair-up": (1.6, 3.8, 1.2, 0.25),
    "climbStair-down": (2.2, 4.5, 1.4, 0.2),
}


def synthetic_hhar_records(users=USERS[:3], devices=("nexus4_1",), activities=ACTIVITIES,
                           seconds: float = 20.0, rate: float = 50.0, seed: int = 0) -> RecordList:
    """Activity-dependent periodic accel/gyro signals with per-user gait variation and noise."""
    rng = np.random.default_rng(seed)
    out = RecordList()
    t0 = 0.0
    for u in users:
        u_scale = rng.uniform(0.85, 1.15)
        for d in devices:
            for a in activities:
                freq, amp, gamp, tilt = _ACTIVITY_SIGNATURE[a]
                freq *= u_scale
                for s_idx, sensor in enumerate(HHAR_SENSORS):
                    n = int(seconds * rate)
                    t = t0 + np.arange(n) / rate + rng.uniform(0, 0.5 / rate, size=n)
                    t.sort()
                    ph = rng.uniform(0, 2 * np.pi, size=3)
                    w = 2 * np.pi * freq * (t - t0)
                    if sensor == "accelerometer":
                        base = np.array([0.0, 9.81 * np.sin(tilt), 9.81 * np.cos(tilt)])
                        sig = base[:, None] + amp * np.stack([np.sin(w + ph[0]), 0.5 * np.sin(2 * w + ph[1]),
                                                              np.sin(w + ph[2])])
                        noise = 0.1
                    else:
                        sig = gamp * np.stack([np.sin(w + ph[0]), np.cos(w + ph[1]), 0.3 * np.sin(2 * w + ph[2])])
                        noise = 0.02
                    sig = sig + rng.normal(0, noise, size=sig.shape)
                    for i in range(n):
                        out.append(HHARRecord(u, d, a, sensor, float(t[i]), *map(float, sig[:, i])))
                t0 += seconds + 10.0
    return out
