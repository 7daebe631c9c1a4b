"""Pure numpy/Python versions of the compiled kernels.

These are the reference implementations; ``_kernels.pyx`` must agree with them to
round-off. Array contracts:

unfold(x[N, C, H, W], fh, fw) -> cols[N, oh, ow, C*fh*fw]
    Patch ``(n, i, j)`` holds ``x[n, :, i:i+fh, j:j+fw]`` flattened in (c, a, b) order,
    with ``oh = H - fh + 1`` and ``ow = W - fw + 1`` (stride 1, no padding).
fold(cols[N, oh, ow, C*fh*fw], C, fh, fw) -> x[N, C, H, W]
    Adjoint of ``unfold``: overlapping patch entries are summed.
strapdown(t, acc[n, 3], gyro_z, mag_heading, gravity, gain, psi0) -> (pos[n, 3], psi[n])
    Heading integrates the yaw rate (trapezoid) and is pulled toward the magnetometer
    heading by ``gain`` each sample; device-frame specific force is rotated to the
    world frame, gravity removed from the vertical axis, and the result integrated
    twice (trapezoid) from rest at the origin.
"""

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def unfold(x, fh, fw):
    n, c = x.shape[:2]
    win = sliding_window_view(x, (fh, fw), axis=(2, 3))  # N, C, oh, ow, fh, fw
    oh, ow = win.shape[2], win.shape[3]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, oh, ow, c * fh * fw)


def fold(cols, c, fh, fw):
    n, oh, ow = cols.shape[:3]
    patches = cols.reshape(n, oh, ow, c, fh, fw)
    out = np.zeros((n, c, oh + fh - 1, ow + fw - 1))
    for a in range(fh):
        for b in range(fw):
            out[:, :, a:a + oh, b:b + ow] += patches[:, :, :, :, a, b].transpose(0, 3, 1, 2)
    return out


def _wrap(a):
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a < 0:
        a += 2.0 * math.pi
    return a - math.pi


def strapdown(t, acc, gyro_z, mag_heading, gravity, gain, psi0):
    n = len(t)
    pos = np.zeros((n, 3))
    psi_out = np.empty(n)
    if n == 0:
        return pos, psi_out
    psi = psi0
    psi_out[0] = psi
    c, s = math.cos(psi), math.sin(psi)
    a0 = acc[0]
    aw_prev = [c * a0[0] - s * a0[1], s * a0[0] + c * a0[1], a0[2] - gravity]
    vel = [0.0, 0.0, 0.0]
    p = [0.0, 0.0, 0.0]
    for k in range(1, n):
        dt = t[k] - t[k - 1]
        psi += 0.5 * (gyro_z[k - 1] + gyro_z[k]) * dt
        psi += gain * _wrap(mag_heading[k] - psi)
        psi_out[k] = psi
        c, s = math.cos(psi), math.sin(psi)
        ak = acc[k]
        aw = (c * ak[0] - s * ak[1], s * ak[0] + c * ak[1], ak[2] - gravity)
        for ax in range(3):
            vnew = vel[ax] + 0.5 * (aw_prev[ax] + aw[ax]) * dt
            p[ax] += 0.5 * (vel[ax] + vnew) * dt
            vel[ax] = vnew
            aw_prev[ax] = aw[ax]
        pos[k] = p
    return pos, psi_out
