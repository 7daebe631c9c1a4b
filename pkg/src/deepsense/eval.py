"""Metrics and the sensor-fusion dead-reckoning baseline."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .dsp import SensorSeries

Z95 = 1.96


# -- regression ----------------------------------------------------------------

def mae_ci(errors) -> tuple[float, float]:
    """Mean absolute error and its 95% normal-approximation half-width.

    ``errors`` are scalars or (n, d) error vectors (Euclidean norm per row).
    """
    e = np.asarray(errors, dtype=np.float64)
    e = np.linalg.norm(e, axis=1) if e.ndim == 2 else np.abs(e.ravel())
    if e.size < 2:
        raise ValueError("need at least 2 errors for a confidence interval")
    return float(e.mean()), float(Z95 * e.std(ddof=1) / np.sqrt(e.size))


def mean_ci(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size < 2:
        raise ValueError("need at least 2 values for a confidence interval")
    return float(v.mean()), float(Z95 * v.std(ddof=1) / np.sqrt(v.size))


@dataclass
class TrackMetrics:
    mae: float
    ci: float
    errors: np.ndarray
    map_accuracy: float

    def to_dict(self) -> dict:
        return {"mae": self.mae, "mae_ci95": self.ci, "map_aided_accuracy": self.map_accuracy}


# -- grid map ------------------------------------------------------------------------

class GridMap:
    """Axis-aligned road grid: intersections at multiples of ``block`` inside an index box.

    Segment ids are ``(orientation, i, j)`` with orientation 'h' (from (i, j) to
    (i+1, j)) or 'v' (from (i, j) to (i, j+1)), in units of blocks from ``origin``.
    """

    def __init__(self, block: float = 80.0, i_range=(-10, 10), j_range=(-10, 10), origin=(0.0, 0.0)):
        if block <= 0:
            raise ValueError("block size must be > 0")
        self.block = float(block)
        self.origin = np.asarray(origin, dtype=np.float64)
        ids, a, b = [], [], []
        i0, i1 = i_range
        j0, j1 = j_range
        for i in range(i0, i1 + 1):
            for j in range(j0, j1 + 1):
                if i < i1:
                    ids.append(("h", i, j))
                    a.append((i, j))
                    b.append((i + 1, j))
                if j < j1:
                    ids.append(("v", i, j))
                    a.append((i, j))
                    b.append((i, j + 1))
        order = sorted(range(len(ids)), key=lambda k: ids[k])  # argmin then breaks ties by id
        self.ids = [ids[k] for k in order]
        self.a = np.array([a[k] for k in order], dtype=np.float64).reshape(-1, 2) * self.block + self.origin
        self.b = np.array([b[k] for k in order], dtype=np.float64).reshape(-1, 2) * self.block + self.origin
        self.horizontal = np.array([s[0] == "h" for s in self.ids], dtype=bool)

    @classmethod
    def covering(cls, points, block: float = 80.0, margin: int = 2, origin=(0.0, 0.0)) -> "GridMap":
        p = (np.asarray(points, dtype=np.float64).reshape(-1, 2) - np.asarray(origin)) / block
        lo = np.floor(p.min(axis=0)).astype(int) - margin
        hi = np.ceil(p.max(axis=0)).astype(int) + margin
        return cls(block, (lo[0], hi[0]), (lo[1], hi[1]), origin)

    def __len__(self) -> int:
        return len(self.ids)

    def distances(self, points) -> np.ndarray:
        """Point-to-segment Euclidean distances, shape (n_points, n_segments)."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 2)[:, None, :]
        ab = self.b - self.a
        t = np.clip(((p - self.a) * ab).sum(-1) / (ab * ab).sum(-1), 0.0, 1.0)
        closest = self.a + t[..., None] * ab
        return np.linalg.norm(p - closest, axis=-1)

    def snap(self, points, horizontal=None, tol: float = 1e-9) -> list:
        """Nearest segment id per point; ``horizontal`` (bool/None per point) restricts the candidates."""
        if len(self) == 0:
            raise ValueError("map has no segments")
        d = self.distances(points)
        if horizontal is not None:
            for k, h in enumerate(horizontal):
                if h is not None:
                    d[k, self.horizontal != h] = np.inf
        best = d.min(axis=1, keepdims=True)
        first = np.argmax(d <= best + tol, axis=1)
        return [self.ids[k] for k in first]


def snap_track(track, gmap: GridMap, use_heading: bool = True, min_len: float = 1.0,
               collapse: bool = True) -> list:
    """Snap each per-interval segment of a polyline (its midpoint) to the map.

    With ``use_heading``, segments longer than ``min_len`` only consider roads
    running along their dominant axis. With ``collapse``, consecutive repeats are
    merged so the result is the sequence of roads travelled.
    """
    p = np.asarray(track, dtype=np.float64).reshape(-1, 2)
    if p.shape[0] < 2:
        return []
    mid = 0.5 * (p[1:] + p[:-1])
    step = np.diff(p, axis=0)
    horiz = None
    if use_heading:
        horiz = [None if np.hypot(*s) <= min_len else bool(abs(s[0]) >= abs(s[1])) for s in step]
    ids = gmap.snap(mid, horiz)
    if collapse:
        ids = [s for k, s in enumerate(ids) if k == 0 or s != ids[k - 1]]
    return ids


def map_snap_accuracy(trajectories, truths, gmap: GridMap, **snap_kw) -> float:
    """Fraction of trajectories whose snapped road sequence equals the truth's."""
    if len(gmap) == 0:
        raise ValueError("map has no segments")
    if len(trajectories) != len(truths):
        raise ValueError("trajectories and truths must align 1:1")
    if not trajectories:
        raise ValueError("no trajectories")
    ok = sum(snap_track(p, gmap, **snap_kw) == snap_track(t, gmap, **snap_kw) for p, t in zip(trajectories, truths))
    return ok / len(trajectories)


# -- classification --------------------------------------------------------------------

@dataclass
class ClassMetrics:
    accuracy: float
    macro_f1: float
    micro_f1: float
    confusion: np.ndarray
    per_class_f1: np.ndarray = field(default=None)

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "macro_f1": self.macro_f1, "micro_f1": self.micro_f1,
                "per_class_f1": [float(v) for v in self.per_class_f1]}


def confusion_matrix(pred, true, n_classes: int) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.int64).ravel()
    true = np.asarray(true, dtype=np.int64).ravel()
    if pred.size != true.size:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {true.size} labels")
    if pred.size and (min(pred.min(), true.min()) < 0 or max(pred.max(), true.max()) >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    return cm


def classification_metrics(pred, true, n_classes: int) -> ClassMetrics:
    cm = confusion_matrix(pred, true, n_classes)
    n = cm.sum()
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    f1 = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    acc = float(tp.sum() / n) if n else 0.0
    TP, FP, FN = tp.sum(), fp.sum(), fn.sum()
    micro = float(2 * TP / (2 * TP + FP + FN)) if n else 0.0
    # single-label: pooled FP == pooled FN == n - TP, so micro F1 must equal accuracy
    assert abs(micro - acc) < 1e-12, (micro, acc)
    return ClassMetrics(acc, math.fsum(f1) / n_classes, micro, cm, f1)


# -- sensor-fusion baseline ------------------------------------------------------------------

@dataclass
class Trajectory:
    t: np.ndarray
    xy: np.ndarray

    def at(self, times) -> np.ndarray:
        times = np.asarray(times, dtype=np.float64)
        return np.stack([np.interp(times, self.t, self.xy[:, 0]), np.interp(times, self.t, self.xy[:, 1])], axis=1)


def mag_heading(mag: SensorSeries) -> np.ndarray:
    """Heading from a level magnetometer whose field points along +y at zero heading."""
    return np.unwrap(np.arctan2(mag.values[0], mag.values[1]))


def sensor_fusion_baseline(accel: SensorSeries, gyro: SensorSeries, mag: SensorSeries,
                           gravity: float = 9.81, gain: float = 0.02) -> Trajectory:
    """Dead reckoning: gyro-integrated heading pulled towards the magnetometer heading,
    gravity removed, world-frame acceleration double-integrated from rest.

    Gyro and magnetometer are linearly interpolated onto the accelerometer clock.
    """
    if len(accel) == 0 or len(gyro) == 0 or len(mag) == 0:
        raise ValueError("sensor-fusion baseline needs non-empty accel, gyro and mag series")
    t = accel.timestamps
    gz = np.interp(t, gyro.timestamps, gyro.values[2])
    hm = np.interp(t, mag.timestamps, mag_heading(mag))
    pos, _ = kernels.strapdown(t, accel.values.T, gz, hm, gravity, gain, hm[0])
    return Trajectory(t.copy(), pos[:, :2].copy())


# -- file formats ------------------------------------------------------------------------------

def metrics_document(task: str, variant: str, metrics: dict, confusion, n_samples: int, seed: int) -> dict:
    return {
        "task": task,
        "variant": variant,
        "metrics": metrics,
        "confusion": [] if confusion is None else np.asarray(confusion).astype(int).tolist(),
        "n_samples": int(n_samples),
        "seed": int(seed),
    }


def write_metrics_json(path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_metrics_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_trajectory_csv(path, t, xy, ids=None) -> None:
    """Rows of (t, x, y); with ``ids`` an extra leading 'trace' column separates tracks."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "y"] if ids is None else ["trace", "t", "x", "y"])
        for k in range(xy.shape[0]):
            row = [repr(float(t[k])), repr(float(xy[k, 0])), repr(float(xy[k, 1]))]
            w.writerow(row if ids is None else [ids[k], *row])


def read_trajectory_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        rows = list(reader)
    if header == ["t", "x", "y"]:
        a = np.array(rows, dtype=np.float64).reshape(-1, 3)
        return a[:, 0], a[:, 1:]
    if header == ["trace", "t", "x", "y"]:
        out: dict = {}
        for r in rows:
            out.setdefault(r[0], []).append([float(v) for v in r[1:]])
        return {k: (np.array(v)[:, 0], np.array(v)[:, 1:]) for k, v in out.items()}
    raise ValueError(f"bad trajectory header {header!r}; expected t,x,y (optionally led by trace)")
