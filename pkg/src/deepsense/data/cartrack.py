"""Turn simulated journeys into model samples with Kalman-smoothed displacement targets."""

from __future__ import annotations

import numpy as np

from ..dsp import assemble_tensor, default_target_len, segment_by_boundaries
from ..eval import sensor_fusion_baseline
from .kalman import kalman_smooth, targets_to_arrays
from .samples import Sample
from .simulate import SENSORS, SyntheticIMUConfig, simulate_trace


def interval_boundaries(gps_times) -> np.ndarray:
    """[0, g_1, ..., g_n]: interval 0 is the stationary lead-in before the first fix."""
    return np.concatenate([[0.0], np.asarray(gps_times, dtype=np.float64)])


def make_cartrack_sample(trace, sensors: dict, gps, config: SyntheticIMUConfig, target_len: int | None = None,
                         f: int | None = None, accel_density: float = 1.0, first_cov: float = 1e-2) -> Sample:
    gps_t, gps_xy = gps
    bounds = interval_boundaries(gps_t)
    ivs = [segment_by_boundaries(sensors[name], bounds) for name in SENSORS]
    m = target_len or default_target_len(ivs[0])
    f = f or m // 2 + 1
    inputs = [assemble_tensor(iv, f, m, k).data for k, iv in enumerate(ivs)]
    targets = kalman_smooth(gps_t, gps_xy, meas_std=max(config.gps_noise, 1e-3),
                            accel_density=accel_density, first_cov=first_cov)
    mean, cov = targets_to_arrays(targets)
    truth = trace.at(bounds)["pos"]
    base = sensor_fusion_baseline(sensors["accel"], sensors["gyro"], sensors["mag"], config.gravity)
    base_track = base.at(bounds)
    base_track = base_track - base_track[0] + truth[0]  # anchored at the known start
    return Sample(
        inputs=inputs,
        widths=np.diff(bounds),
        target_mean=mean,
        target_cov=cov,
        meta={"kind": "cartrack", "duration": float(trace.t[-1]), "block": config.block},
        arrays={"truth_track": truth, "baseline_track": base_track, "gps_xy": np.asarray(gps_xy)},
    )


def make_cartrack_samples(n: int, config: SyntheticIMUConfig, duration=(60.0, 120.0), seed: int = 0,
                          target_len: int | None = 32, f: int | None = None, **kw) -> list[Sample]:
    """``n`` independent journeys with durations drawn uniformly from ``duration``."""
    ss = np.random.SeedSequence(seed)
    out = []
    for child in ss.spawn(n):
        rng = np.random.default_rng(child)
        d = float(rng.uniform(*duration)) if np.ndim(duration) else float(duration)
        trace_seed = int(rng.integers(2 ** 63))
        trace, sensors, gps = simulate_trace(config, d, seed=trace_seed)
        s = make_cartrack_sample(trace, sensors, gps, config, target_len, f, **kw)
        s.meta["seed"] = trace_seed
        out.append(s)
    return out
