"""Synthetic zero-speed-to-zero-speed car journeys with IMU/magnetometer/GPS readings.

The car drives along the roads of an axis-aligned city grid. Heading is a sum of
smooth 90 degree turns centred on intersections; speed is a C1 profile built from
quintic ramps at both ends and a distance-domain cruise profile (slower through
turns) in between. Positions, velocities and accelerations are evaluated
analytically (positions by fine-grid quadrature), and device-frame sensor
readings are derived from them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_simpson, quad, solve_ivp
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from ..dsp import SensorSeries

SENSORS = ("accel", "gyro", "mag")
_DIP_HALF_WIDTH = 40.0  # m, slow-down zone either side of a turn


@dataclass(frozen=True)
class SyntheticIMUConfig:
    accel_rate: float = 100.0  # Hz
    gyro_rate: float = 100.0
    mag_rate: float = 50.0
    gps_period: float = 1.0  # s
    gps_jitter: float = 0.02  # s, uniform +-
    accel_noise: float = 0.05  # m/s^2
    accel_bias: float = 0.05  # m/s^2, initial bias std
    accel_bias_drift: float = 0.002  # m/s^2 / sqrt(s), random walk
    gyro_noise: float = 0.005  # rad/s
    gyro_bias: float = 0.002  # rad/s
    mag_noise: float = 0.5  # uT
    mag_horizontal: float = 20.0  # uT
    mag_vertical: float = 40.0  # uT
    gps_noise: float = 5.0  # m
    gravity: float = 9.81
    vibration: float = 0.05  # (m/s^2) per (m/s), vertical wheel vibration amplitude
    wheel_radius: float = 0.3  # m
    block: float = 80.0  # m, grid spacing
    turn_length: float = 20.0  # m of arc per 90 degree turn
    speed_range: tuple = (8.0, 14.0)  # cruise speed, m/s; (0, 0) gives a parked car
    turn_speed: float = 5.0  # m/s through the middle of a turn
    ramp_time: tuple = (4.0, 7.0)  # s, start/stop ramp duration
    rest_time: tuple = (3.0, 4.0)  # s, stationary time at each end
    seed: int = 0

    def __post_init__(self):
        for name in ("accel_rate", "gyro_rate", "mag_rate", "gps_period", "block", "turn_length"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("gps_jitter", "accel_noise", "accel_bias", "accel_bias_drift", "gyro_noise",
                     "gyro_bias", "mag_noise", "gps_noise", "vibration"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.gps_jitter >= self.gps_period / 2:
            raise ValueError("gps_jitter must be below half the GPS period")

    def noiseless(self) -> "SyntheticIMUConfig":
        return self.replace(gps_jitter=0.0, accel_noise=0.0, accel_bias=0.0, accel_bias_drift=0.0,
                            gyro_noise=0.0, gyro_bias=0.0, mag_noise=0.0, gps_noise=0.0)

    def replace(self, **kw) -> "SyntheticIMUConfig":
        d = asdict(self)
        d.update(kw)
        return SyntheticIMUConfig(**d)


@dataclass
class KinematicTrace:
    t: np.ndarray  # (n,) s
    pos: np.ndarray  # (n, 2) m
    vel: np.ndarray  # (n, 2) m/s
    acc: np.ndarray  # (n, 2) m/s^2
    heading: np.ndarray  # (n,) rad, from +x towards +y
    gps_times: np.ndarray  # (n_fix,) true fix times, also the interval boundaries
    displacement: np.ndarray  # (n_fix, 2) true displacement per interval
    route: dict = field(default_factory=dict)
    state: object = None  # callable t -> (pos, vel, acc, heading, yaw_rate, s)

    @property
    def final_displacement(self) -> np.ndarray:
        return self.displacement.sum(axis=0)

    def at(self, times) -> dict:
        return self.state(np.asarray(times, dtype=np.float64))


# -- smooth building blocks -------------------------------------------------

def smootherstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x ** 3 * (x * (6 * x - 15) + 10)


def smootherstep_d(x):
    inside = (x > 0) & (x < 1)
    x = np.clip(x, 0.0, 1.0)
    return np.where(inside, 30 * x ** 2 * (x - 1) ** 2, 0.0)


def smootherstep_int(x):
    """Integral of smootherstep from 0 to x for x in [0, 1]."""
    x = np.clip(x, 0.0, 1.0)
    return x ** 4 * (x * (x - 3) + 2.5)


def _bump(x):
    # (1 - x^2)^3 on |x| < 1: value, first and second derivative vanish at the edge
    inside = np.abs(x) < 1
    u = np.where(inside, 1 - x * x, 0.0)
    return u ** 3, np.where(inside, -6 * x * u ** 2, 0.0)


def turn_offset(length: float) -> float:
    """Distance from a turn's start to the intersection it rounds, along the incoming road."""
    val, _ = quad(lambda s: np.cos(0.5 * np.pi * smootherstep(s / length)), 0.0, length,
                  epsabs=1e-13, epsrel=1e-13)
    return float(val)


# -- route geometry ----------------------------------------------------------

class _Route:
    """Heading/curvature as functions of arc length for a grid-following route."""

    def __init__(self, cfg: SyntheticIMUConfig, rng: np.random.Generator, length_needed: float):
        self.w = cfg.turn_length
        self.a = turn_offset(self.w)
        if 2 * self.a >= cfg.block:
            raise ValueError("turn_length too long for the block size")
        axis = int(rng.integers(4))
        self.psi0 = axis * np.pi / 2
        ij = rng.integers(-4, 5, size=2)
        lead = float(rng.uniform(0.0, cfg.block))  # start part-way along a block
        d = np.array([np.cos(self.psi0), np.sin(self.psi0)]).round()
        self.start = ij * cfg.block + d * lead
        centers, signs = [], []
        n = int(rng.integers(1, 4))
        c = n * cfg.block - lead - self.a + self.w / 2
        if c - self.w / 2 < 0:
            c += cfg.block
        while c < length_needed + cfg.block:
            centers.append(c)
            signs.append(1.0 if rng.random() < 0.5 else -1.0)
            n = int(rng.integers(1, 4))
            c += self.w + n * cfg.block - 2 * self.a
        self.centers = np.array(centers)
        self.signs = np.array(signs) * (np.pi / 2)
        self.block = cfg.block

    def drop(self, mask) -> None:
        """Replace the masked turns by driving straight through the intersection."""
        shift = np.cumsum(mask) * (2 * self.a - self.w)  # straight-through is 2a - w longer
        self.centers = (self.centers + shift)[~mask]
        self.signs = self.signs[~mask]

    def heading(self, s):
        s = np.atleast_1d(s)[:, None]
        x = (s - self.centers[None, :] + self.w / 2) / self.w
        return self.psi0 + (smootherstep(x) * self.signs).sum(axis=1)

    def curvature(self, s):
        s = np.atleast_1d(s)[:, None]
        x = (s - self.centers[None, :] + self.w / 2) / self.w
        return (smootherstep_d(x) * self.signs).sum(axis=1) / self.w

    def positions(self, s_max: float, ds: float = 0.05):
        n = int(np.ceil(s_max / ds)) + 1
        grid = np.linspace(0.0, max(s_max, ds), max(n, 3))
        psi = self.heading(grid)
        xy = np.stack([cumulative_simpson(np.cos(psi), x=grid, initial=0.0),
                       cumulative_simpson(np.sin(psi), x=grid, initial=0.0)], axis=1)
        return grid, xy + self.start


# -- speed profile -----------------------------------------------------------

class _Speed:
    """Speed as a C1 function of time: quintic ramps at the ends, distance-domain cruise between."""

    def __init__(self, cfg, rng, route: _Route, duration: float):
        self.v0 = float(rng.uniform(*cfg.speed_range))
        self.moving = self.v0 > 0
        self.rest0 = float(rng.uniform(*cfg.rest_time))
        rest1 = float(rng.uniform(*cfg.rest_time))
        self.ramp = float(rng.uniform(*cfg.ramp_time))
        self.duration = duration
        if not self.moving:
            self.t1 = self.t2 = self.t3 = duration
            self.s_a = self.s_e = 0.0
            return
        budget = duration - self.rest0 - rest1
        if budget <= 1.0:
            raise ValueError("duration too short for the stationary phases")
        self.ramp = min(self.ramp, 0.3 * budget)
        cruise = budget - 2 * self.ramp
        self.s_a = 0.5 * self.v0 * self.ramp
        # dips through turns, gentle random variation elsewhere
        depth = np.clip(1.0 - cfg.turn_speed / self.v0, 0.0, 0.9)
        self.dips = [(c, _DIP_HALF_WIDTH, depth) for c in route.centers]
        n_var = int(rng.integers(2, 6))
        span = self.v0 * cruise
        for _ in range(n_var):
            self.dips.append((self.s_a + float(rng.uniform(0, span)), float(rng.uniform(30, 80)),
                              float(rng.uniform(-0.25, 0.2))))
        self._dip_arrays = tuple(np.array(col, dtype=np.float64) for col in zip(*self.dips))
        self.win = self.v0 * min(1.5, 0.2 * cruise)  # taper length of the cruise window
        self.t1 = self.rest0 + self.ramp
        self.s_e = self._solve_end(cruise)
        sol = solve_ivp(lambda t, s: self.v0 * self._m(s)[0], (self.t1, self.t1 + cruise),
                        [self.s_a], method="DOP853", rtol=1e-11, atol=1e-10, dense_output=True)
        self._mid = sol.sol
        self.t2 = self.t1 + cruise
        self.s_e = float(sol.sol(self.t2)[0])
        self.t3 = self.t2 + self.ramp

    def _window(self, s):
        up = smootherstep((s - self.s_a) / self.win)
        dn = smootherstep((self._end - s) / self.win)
        dup = smootherstep_d((s - self.s_a) / self.win) / self.win
        ddn = -smootherstep_d((self._end - s) / self.win) / self.win
        return up * dn, dup * dn + up * ddn

    def _raw(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=np.float64))[:, None]
        c, h, depth = self._dip_arrays
        b, db = _bump((s - c) / h)
        f = 1 - depth * b  # every factor >= 0.1
        m = f.prod(axis=1)
        return m, m * (-depth * db / h / f).sum(axis=1)

    def _m(self, s):
        """Cruise multiplier and its derivative d/ds, windowed to 1 near both ends."""
        m, dm = self._raw(s)
        w, dw = self._window(np.atleast_1d(s))
        return 1 - (1 - m) * w, dm * w - (1 - m) * dw

    def _solve_end(self, cruise: float) -> float:
        def travel_time(end):
            self._end = end
            grid = np.linspace(self.s_a, end, 4001)
            return cumulative_simpson(1.0 / (self.v0 * self._m(grid)[0]), x=grid)[-1] - cruise

        lo = self.s_a + 2 * self.win
        while travel_time(lo) > 0:
            self.win *= 0.5
            lo = self.s_a + 2 * self.win
        hi = self.s_a + 12.0 * self.v0 * cruise
        end = brentq(travel_time, lo, hi, xtol=1e-9)
        self._end = end
        return end

    def __call__(self, t):
        """Arc length, speed and tangential acceleration at times t."""
        t = np.asarray(t, dtype=np.float64)
        s = np.zeros_like(t)
        v = np.zeros_like(t)
        a = np.zeros_like(t)
        if not self.moving:
            return s, v, a
        r = self.ramp
        p1 = (t >= self.rest0) & (t < self.t1)
        x = (t[p1] - self.rest0) / r
        s[p1] = self.v0 * r * smootherstep_int(x)
        v[p1] = self.v0 * smootherstep(x)
        a[p1] = self.v0 * smootherstep_d(x) / r
        p2 = (t >= self.t1) & (t < self.t2)
        if p2.any():
            sm = self._mid(t[p2])[0]
            m, dm = self._m(sm)
            s[p2] = sm
            v[p2] = self.v0 * m
            a[p2] = self.v0 * dm * v[p2]
        p3 = (t >= self.t2) & (t < self.t3)
        x = (t[p3] - self.t2) / r
        s[p3] = self.s_e + self.v0 * r * (x - smootherstep_int(x))
        v[p3] = self.v0 * (1 - smootherstep(x))
        a[p3] = -self.v0 * smootherstep_d(x) / r
        p4 = t >= self.t3
        s[p4] = self.s_e + 0.5 * self.v0 * r
        return s, v, a

    @property
    def total_distance(self) -> float:
        return self.s_e + 0.5 * self.v0 * self.ramp if self.moving else 0.0


# -- public API ------------------------------------------------------------------

def _rotate_to_device(psi, vec2):
    c, s = np.cos(psi), np.sin(psi)
    return np.stack([c * vec2[:, 0] + s * vec2[:, 1], -s * vec2[:, 0] + c * vec2[:, 1]], axis=1)


def simulate_trace(config: SyntheticIMUConfig, duration: float, seed: int | None = None):
    """Simulate one journey.

    Returns ``(trace, sensors, gps)`` where ``sensors`` maps accel/gyro/mag to
    SensorSeries (3 axes, device frame) and ``gps`` is ``(times, xy)`` with noisy
    fixes every ``gps_period`` seconds (first fix at one period).
    """
    if duration < 10:
        raise ValueError("duration must be at least 10 s")
    seed = config.seed if seed is None else seed
    ss = np.random.SeedSequence(seed)
    geo_rng, noise_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    cfg = config
    route = _Route(cfg, geo_rng, cfg.speed_range[1] * duration * 1.2)
    speed_state = geo_rng.bit_generator.state
    for _ in range(20):
        geo_rng.bit_generator.state = speed_state
        speed = _Speed(cfg, geo_rng, route, duration)
        if not speed.moving:
            break
        # no turns inside the ramps: keep the car going straight through those intersections
        margin = _DIP_HALF_WIDTH + cfg.turn_length
        keep = (route.centers > speed.s_a + speed.win + margin) & (route.centers < speed.s_e - speed.win - margin)
        keep |= route.centers > speed.total_distance + margin
        if keep.all():
            break
        route.drop(~keep)
    s_grid, xy_grid = route.positions(speed.total_distance + 1.0)
    sx = CubicSpline(s_grid, xy_grid[:, 0])
    sy = CubicSpline(s_grid, xy_grid[:, 1])

    def state(t):
        s, v, vdot = speed(t)
        psi = route.heading(s)
        kappa = route.curvature(s)
        tang = np.stack([np.cos(psi), np.sin(psi)], axis=1)
        norm = np.stack([-np.sin(psi), np.cos(psi)], axis=1)
        return {
            "s": s, "speed": v, "heading": psi, "yaw_rate": kappa * v,
            "pos": np.stack([sx(s), sy(s)], axis=1),
            "vel": tang * v[:, None],
            "acc": tang * vdot[:, None] + norm * (v * v * kappa)[:, None],
        }

    t = np.arange(int(np.floor(duration * cfg.accel_rate)) + 1) / cfg.accel_rate
    st = state(t)

    # GPS fixes and interval boundaries
    n_fix = int(np.floor(duration / cfg.gps_period + 1e-9))
    gps_t = np.arange(1, n_fix + 1) * cfg.gps_period
    if cfg.gps_jitter > 0:
        gps_t = gps_t + noise_rng.uniform(-cfg.gps_jitter, cfg.gps_jitter, size=n_fix)
        gps_t[-1] = min(gps_t[-1], duration)
    gps_pos = state(gps_t)["pos"]
    gps_xy = gps_pos + noise_rng.normal(0.0, cfg.gps_noise, size=gps_pos.shape) if cfg.gps_noise > 0 else gps_pos.copy()
    start = state(np.zeros(1))["pos"][0]
    disp = np.diff(np.vstack([start, gps_pos]), axis=0)

    sensors = {}
    # accelerometer: specific force in the device frame
    ta = t
    sa = st
    f = np.zeros((ta.size, 3))
    f[:, :2] = _rotate_to_device(sa["heading"], sa["acc"])
    f[:, 2] = cfg.gravity + cfg.vibration * sa["speed"] * np.sin(sa["s"] / cfg.wheel_radius)
    bias = noise_rng.normal(0.0, cfg.accel_bias, size=3)
    walk = np.cumsum(noise_rng.normal(0.0, cfg.accel_bias_drift / np.sqrt(cfg.accel_rate), size=(ta.size, 3)), axis=0)
    f = f + bias + walk + noise_rng.normal(0.0, cfg.accel_noise, size=f.shape)
    sensors["accel"] = SensorSeries(0, f.T.copy(), ta)

    tg = np.arange(int(np.floor(duration * cfg.gyro_rate)) + 1) / cfg.gyro_rate
    sg = state(tg)
    g = np.zeros((tg.size, 3))
    g[:, 2] = sg["yaw_rate"]
    g = g + noise_rng.normal(0.0, cfg.gyro_bias, size=3) + noise_rng.normal(0.0, cfg.gyro_noise, size=g.shape)
    sensors["gyro"] = SensorSeries(1, g.T.copy(), tg)

    tm = np.arange(int(np.floor(duration * cfg.mag_rate)) + 1) / cfg.mag_rate
    sm = state(tm)
    m = np.zeros((tm.size, 3))
    horiz = np.zeros((tm.size, 2))
    horiz[:, 1] = cfg.mag_horizontal  # field points to +y ("north")
    m[:, :2] = _rotate_to_device(sm["heading"], horiz)
    m[:, 2] = -cfg.mag_vertical
    m = m + noise_rng.normal(0.0, cfg.mag_noise, size=m.shape)
    sensors["mag"] = SensorSeries(2, m.T.copy(), tm)

    trace = KinematicTrace(
        t=t, pos=st["pos"], vel=st["vel"], acc=st["acc"], heading=st["heading"],
        gps_times=gps_t, displacement=disp,
        route={"start": route.start.tolist(), "block": cfg.block, "distance": speed.total_distance},
        state=state,
    )
    return trace, sensors, (gps_t, gps_xy)


# -- file formats --------------------------------------------------------------

TRACE_HEADER = ["t", "sensor", "x", "y", "z"]
TRUTH_HEADER = ["t", "px", "py", "vx", "vy"]


def write_trace_csv(path, sensors: dict, gps) -> None:
    """Sensor readings as (t, sensor, x, y, z) rows; GPS fixes use sensor 'gps' and z=0."""
    rows = []
    for name in SENSORS:
        ser = sensors[name]
        for i in range(ser.timestamps.size):
            rows.append((ser.timestamps[i], name, *ser.values[:, i]))
    for tt, (x, y) in zip(*gps):
        rows.append((tt, "gps", x, y, 0.0))
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in rows:
            w.writerow([repr(float(r[0])), r[1], *(repr(float(v)) for v in r[2:])])


def read_trace_csv(path):
    path = Path(path)
    cols = {k: ([], []) for k in (*SENSORS, "gps")}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRACE_HEADER:
            raise ValueError(f"bad trace header {header!r}; expected {TRACE_HEADER}")
        for row in reader:
            name = row[1]
            if name not in cols:
                raise ValueError(f"unknown sensor {name!r}")
            cols[name][0].append(float(row[0]))
            cols[name][1].append([float(v) for v in row[2:5]])
    sensors = {}
    for k, name in enumerate(SENSORS):
        tt, vv = cols[name]
        sensors[name] = SensorSeries(k, np.asarray(vv, dtype=np.float64).reshape(-1, 3).T.copy(),
                                     np.asarray(tt, dtype=np.float64))
    gt, gv = cols["gps"]
    gps = (np.asarray(gt), np.asarray(gv, dtype=np.float64).reshape(-1, 3)[:, :2])
    return sensors, gps


def write_truth_csv(path, trace: KinematicTrace) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRUTH_HEADER)
        for i in range(trace.t.size):
            w.writerow([repr(float(trace.t[i])), repr(float(trace.pos[i, 0])), repr(float(trace.pos[i, 1])),
                        repr(float(trace.vel[i, 0])), repr(float(trace.vel[i, 1]))])


def read_truth_csv(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRUTH_HEADER:
            raise ValueError(f"bad truth header {header!r}; expected {TRUTH_HEADER}")
        return np.array([[float(v) for v in row] for row in reader]).reshape(-1, 5)
