"""Constant-velocity Kalman filter + RTS smoother turning GPS fixes into displacement targets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class GaussianTarget:
    mean: np.ndarray  # (2,) displacement over one interval, metres
    cov: np.ndarray  # (2, 2) m^2, symmetric positive definite

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(2)
        self.cov = np.asarray(self.cov, dtype=np.float64).reshape(2, 2)
        if not np.allclose(self.cov, self.cov.T, atol=1e-12):
            raise ValueError("target covariance must be symmetric")
        try:
            np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("target covariance must be positive definite") from exc


@dataclass
class SmootherOutput:
    means: np.ndarray  # (n, 4) smoothed [px, py, vx, vy]
    covs: np.ndarray  # (n, 4, 4)
    cross: np.ndarray  # (n-1, 4, 4) Cov(x_{k+1}, x_k | all fixes)
    filtered_means: np.ndarray
    filtered_covs: np.ndarray


def _cv_model(dt: float, q: float):
    F = np.eye(4)
    F[0, 2] = F[1, 3] = dt
    # white-noise acceleration with spectral density q (m^2/s^3)
    q11, q12, q22 = dt ** 3 / 3.0, dt ** 2 / 2.0, dt
    Q = q * np.array([
        [q11, 0, q12, 0],
        [0, q11, 0, q12],
        [q12, 0, q22, 0],
        [0, q12, 0, q22],
    ])
    return F, Q


def rts_smooth(times, fixes, meas_std: float, accel_density: float = 1.0,
               init_pos_std: float | None = None, init_vel_std: float = 1.0) -> SmootherOutput:
    """Forward Kalman filter and Rauch-Tung-Striebel backward pass over 2-D fixes."""
    t = np.asarray(times, dtype=np.float64)
    z = np.asarray(fixes, dtype=np.float64).reshape(-1, 2)
    n = t.size
    if n < 2 or z.shape[0] != n:
        raise ValueError("need at least two fixes with matching timestamps")
    if np.any(np.diff(t) <= 0):
        raise ValueError("fix timestamps must be strictly increasing")
    H = np.zeros((2, 4))
    H[0, 0] = H[1, 1] = 1.0
    R = np.eye(2) * meas_std ** 2
    pos_std = meas_std if init_pos_std is None else init_pos_std
    x = np.array([z[0, 0], z[0, 1], 0.0, 0.0])
    P = np.diag([pos_std ** 2, pos_std ** 2, init_vel_std ** 2, init_vel_std ** 2])

    xf = np.zeros((n, 4))
    Pf = np.zeros((n, 4, 4))
    xp = np.zeros((n, 4))
    Pp = np.zeros((n, 4, 4))
    Fs = np.zeros((n, 4, 4))
    for k in range(n):
        if k > 0:
            F, Q = _cv_model(t[k] - t[k - 1], accel_density)
            x = F @ x
            P = F @ P @ F.T + Q
            Fs[k] = F
        xp[k], Pp[k] = x, P
        if k > 0 or init_pos_std is not None:
            S = H @ P @ H.T + R
            K = np.linalg.solve(S, H @ P).T
            x = x + K @ (z[k] - H @ x)
            IKH = np.eye(4) - K @ H
            P = IKH @ P @ IKH.T + K @ R @ K.T  # Joseph form keeps P symmetric PSD
        else:
            # first fix initialises the position directly
            x = x.copy()
            P = np.diag([meas_std ** 2, meas_std ** 2, init_vel_std ** 2, init_vel_std ** 2])
        xf[k], Pf[k] = x, P

    xs = xf.copy()
    Ps = Pf.copy()
    cross = np.zeros((n - 1, 4, 4))
    for k in range(n - 2, -1, -1):
        G = np.linalg.solve(Pp[k + 1], Fs[k + 1] @ Pf[k]).T
        xs[k] = xf[k] + G @ (xs[k + 1] - xp[k + 1])
        Ps[k] = Pf[k] + G @ (Ps[k + 1] - Pp[k + 1]) @ G.T
        Ps[k] = 0.5 * (Ps[k] + Ps[k].T)
        cross[k] = Ps[k + 1] @ G.T
    return SmootherOutput(xs, Ps, cross, xf, Pf)


def kalman_smooth(times, fixes, meas_std: float = 5.0, accel_density: float = 1.0,
                  first_cov: float = 1e-2) -> list[GaussianTarget]:
    """Per-interval displacement targets from noisy 2-D position fixes.

    Interval 0 is the zero-speed lead-in with mean 0 and covariance
    ``first_cov * I``. Interval k >= 1 is the smoothed position change between
    fixes k-1 and k; its covariance uses the smoother's lag-one cross covariance:
    ``Cov(p_k - p_{k-1}) = P_k + P_{k-1} - C_k - C_k^T``.
    """
    sm = rts_smooth(times, fixes, meas_std, accel_density)
    out = [GaussianTarget(np.zeros(2), np.eye(2) * first_cov)]
    for k in range(1, sm.means.shape[0]):
        mean = sm.means[k, :2] - sm.means[k - 1, :2]
        c = sm.cross[k - 1][:2, :2]
        cov = sm.covs[k][:2, :2] + sm.covs[k - 1][:2, :2] - c - c.T
        cov = 0.5 * (cov + cov.T)
        out.append(GaussianTarget(mean, cov))
    return out


def targets_to_arrays(targets: list[GaussianTarget]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([t.mean for t in targets]), np.stack([t.cov for t in targets])
