"""Compiled inner loops of the planar gripper simulator.

Coordinates: x horizontal, y up, z out of the squeeze plane. Each finger
hangs from its base toward -y. Hinge angles are measured so that a positive
angle bends the finger toward the gripper centre line; ``sigma`` is -1 for
the left finger and +1 for the right one, and the world-frame rotation of a
link is ``-sigma * (sum of proximal hinge angles)``.

Everything here works on flat float64 arrays so the same code serves the
single-step Python API and the full episode loop.
"""

import math

import numpy as np
from numba import njit

BALL = 0
BOX = 1
CYLINDER = 2

# Sample points used for the cylinder contact patch.
_CYL_POINTS = 3


@njit(cache=True)
def _cross(ax, ay, bx, by):
    return ax * by - ay * bx


@njit(cache=True)
def _penalty(k, c, depth, rate):
    f = k * depth + c * rate
    return f if f > 0.0 else 0.0


@njit(cache=True)
def _closest_on_segment(sx, sy, ex, ey, px, py):
    dx = ex - sx
    dy = ey - sy
    ll = dx * dx + dy * dy
    if ll == 0.0:
        return 0.0
    s = ((px - sx) * dx + (py - sy) * dy) / ll
    if s < 0.0:
        s = 0.0
    elif s > 1.0:
        s = 1.0
    return s


@njit(cache=True)
def _radial(qx, qy, qvx, qvy, k, c, radius, cx, cy):
    rx = qx - cx
    ry = qy - cy
    d = math.sqrt(rx * rx + ry * ry)
    depth = radius - d
    if depth <= 0.0 or d == 0.0:
        return 0.0, 0.0, 0.0, depth
    nx = rx / d
    ny = ry / d
    rate = -(nx * qvx + ny * qvy)
    f = _penalty(k, c, depth, rate)
    return f, nx, ny, depth


@njit(cache=True)
def _box_point(qx, qy, qvx, qvy, k, c, half, cx, cy):
    rx = qx - cx
    ry = qy - cy
    dx = half - abs(rx)
    dy = half - abs(ry)
    if dx <= 0.0 or dy <= 0.0:
        return 0.0, 0.0, 0.0, min(dx, dy)
    if dx <= dy:
        nx = 1.0 if rx >= 0.0 else -1.0
        ny = 0.0
        depth = dx
    else:
        nx = 0.0
        ny = 1.0 if ry >= 0.0 else -1.0
        depth = dy
    rate = -(nx * qvx + ny * qvy)
    f = _penalty(k, c, depth, rate)
    return f, nx, ny, depth


@njit(cache=True)
def contact_kernel(sx, sy, ex, ey, vsx, vsy, vex, vey, shape, k, c, size, cx, cy, half_width):
    """Penalty contact between one rigid link segment and the object.

    Returns (fx, fy, px, py, depth): resultant force, its application point
    and the deepest signed penetration found (negative when separated).
    """
    if shape == BOX:
        best_f = 0.0
        best_nx = 0.0
        best_ny = 0.0
        best_s = 0.0
        best_depth = -1e300
        for i in range(3):
            s = 0.5 * i
            qx = sx + s * (ex - sx)
            qy = sy + s * (ey - sy)
            qvx = vsx + s * (vex - vsx)
            qvy = vsy + s * (vey - vsy)
            f, nx, ny, depth = _box_point(qx, qy, qvx, qvy, k, c, size, cx, cy)
            if depth > best_depth:
                best_depth = depth
                best_f = f
                best_nx = nx
                best_ny = ny
                best_s = s
        px = sx + best_s * (ex - sx)
        py = sy + best_s * (ey - sy)
        return best_f * best_nx, best_f * best_ny, px, py, best_depth

    s0 = _closest_on_segment(sx, sy, ex, ey, cx, cy)
    if shape == BALL:
        qx = sx + s0 * (ex - sx)
        qy = sy + s0 * (ey - sy)
        qvx = vsx + s0 * (vex - vsx)
        qvy = vsy + s0 * (vey - vsy)
        f, nx, ny, depth = _radial(qx, qy, qvx, qvy, k, c, size, cx, cy)
        return f * nx, f * ny, qx, qy, depth

    # Cylinder: radial normals sampled over a patch of +-half_width along the
    # link; each sample carries an equal share of the stiffness.
    length = math.sqrt((ex - sx) ** 2 + (ey - sy) ** 2)
    ds = half_width / length if length > 0.0 else 0.0
    fx = 0.0
    fy = 0.0
    wsum = 0.0
    ws = 0.0
    best_depth = -1e300
    share = 1.0 / _CYL_POINTS
    for i in range(_CYL_POINTS):
        s = s0 + ds * (i - 1)
        if s < 0.0:
            s = 0.0
        elif s > 1.0:
            s = 1.0
        qx = sx + s * (ex - sx)
        qy = sy + s * (ey - sy)
        qvx = vsx + s * (vex - vsx)
        qvy = vsy + s * (vey - vsy)
        f, nx, ny, depth = _radial(qx, qy, qvx, qvy, share * k, share * c, size, cx, cy)
        if depth > best_depth:
            best_depth = depth
        fx += f * nx
        fy += f * ny
        wsum += f
        ws += f * s
    s_app = ws / wsum if wsum > 0.0 else s0
    px = sx + s_app * (ex - sx)
    py = sy + s_app * (ey - sy)
    return fx, fy, px, py, best_depth


@njit(cache=True)
def finger_kinematics(theta, omega, base_x, sigma, length, px, py, vx, vy, ux, uy, wz):
    """Joint positions/velocities, link directions and world angular rates."""
    n = theta.shape[0]
    px[0] = base_x
    py[0] = 0.0
    vx[0] = 0.0
    vy[0] = 0.0
    phi = 0.0
    rate = 0.0
    for j in range(n):
        phi += theta[j]
        rate += omega[j]
        ux[j] = -sigma * math.sin(phi)
        uy[j] = -math.cos(phi)
        wz[j] = -sigma * rate
        px[j + 1] = px[j] + length * ux[j]
        py[j + 1] = py[j] + length * uy[j]
        # v_{j+1} = v_j + w x (L u)
        vx[j + 1] = vx[j] - wz[j] * length * uy[j]
        vy[j + 1] = vy[j] + wz[j] * length * ux[j]


@njit(cache=True)
def finger_step(theta, omega, base_x, sigma, length, mass, k_joint, c_joint, tau,
                shape, k_obj, c_obj, size, cx, cy, half_width, has_object, gravity, dt,
                theta_out, omega_out, alpha_out):
    """Advance one finger by a semi-implicit Euler step; returns max penetration."""
    n = theta.shape[0]
    px = np.empty(n + 1)
    py = np.empty(n + 1)
    vx = np.empty(n + 1)
    vy = np.empty(n + 1)
    ux = np.empty(n)
    uy = np.empty(n)
    wz = np.empty(n)
    finger_kinematics(theta, omega, base_x, sigma, length, px, py, vx, vy, ux, uy, wz)

    # joint damping is applied implicitly below; everything else explicitly
    torque = np.empty(n)
    for i in range(n):
        torque[i] = tau - k_joint * theta[i]

    max_depth = -1e300
    fg = -mass * gravity
    for j in range(n):
        gx = 0.5 * (px[j] + px[j + 1])
        gy = 0.5 * (py[j] + py[j + 1])
        fx = 0.0
        fy = 0.0
        qx = 0.0
        qy = 0.0
        if has_object:
            fx, fy, qx, qy, depth = contact_kernel(
                px[j], py[j], px[j + 1], py[j + 1], vx[j], vy[j], vx[j + 1], vy[j + 1],
                shape, k_obj, c_obj, size, cx, cy, half_width)
            if depth > max_depth:
                max_depth = depth
        for i in range(j + 1):
            t = _cross(gx - px[i], gy - py[i], 0.0, fg)
            if fx != 0.0 or fy != 0.0:
                t += _cross(qx - px[i], qy - py[i], fx, fy)
            torque[i] += -sigma * t

    link_inertia = mass * length * length / 12.0
    for i in range(n):
        inertia = 0.0
        for j in range(i, n):
            gx = 0.5 * (px[j] + px[j + 1]) - px[i]
            gy = 0.5 * (py[j] + py[j + 1]) - py[i]
            inertia += link_inertia + mass * (gx * gx + gy * gy)
        w = (omega[i] + dt * torque[i] / inertia) / (1.0 + dt * c_joint / inertia)
        alpha_out[i] = (w - omega[i]) / dt
        omega_out[i] = w
        theta_out[i] = theta[i] + w * dt
    return max_depth


@njit(cache=True)
def mount_velocity(theta, omega, base_x, sigma, length, mount_link, mount_offset):
    """World velocity, link direction and angular rate at the IMU mount."""
    n = theta.shape[0]
    px = np.empty(n + 1)
    py = np.empty(n + 1)
    vx = np.empty(n + 1)
    vy = np.empty(n + 1)
    ux = np.empty(n)
    uy = np.empty(n)
    wz = np.empty(n)
    finger_kinematics(theta, omega, base_x, sigma, length, px, py, vx, vy, ux, uy, wz)
    j = mount_link
    mvx = vx[j] - wz[j] * mount_offset * uy[j]
    mvy = vy[j] + wz[j] * mount_offset * ux[j]
    return mvx, mvy, ux[j], uy[j], wz[j]


@njit(cache=True)
def imu_kernel(theta_prev, omega_prev, theta, omega, base_x, sigma, length,
               mount_link, mount_offset, gravity, dt, accel_bias, gyro_bias, out):
    """Fill ``out[0:6]`` with accel xyz then gyro xyz in the sensor frame."""
    v0x, v0y, _, _, _ = mount_velocity(theta_prev, omega_prev, base_x, sigma, length,
                                       mount_link, mount_offset)
    v1x, v1y, ux, uy, w = mount_velocity(theta, omega, base_x, sigma, length,
                                         mount_link, mount_offset)
    # specific force: kinematic acceleration minus gravity (gravity = -g y)
    fx = (v1x - v0x) / dt
    fy = (v1y - v0y) / dt + gravity
    # sensor x along the link toward the tip, sensor y = x rotated +90 deg
    out[0] = ux * fx + uy * fy + accel_bias[0]
    out[1] = -uy * fx + ux * fy + accel_bias[1]
    out[2] = accel_bias[2]
    out[3] = gyro_bias[0]
    out[4] = gyro_bias[1]
    out[5] = w + gyro_bias[2]


@njit(cache=True)
def run_episode_kernel(n, length, mass, k_joint, c_joint, separation, mount_link, mount_offset,
                       torques, scales, shape, k_obj, c_obj, size, cx, cy, half_width,
                       gravity, dt, stride, accel_bias, gyro_bias, signal, theta_trace):
    """Integrate both fingers over ``torques.shape[0]`` steps.

    Writes IMU frames into ``signal`` (samples x 12) every ``stride`` steps and
    the total bend angle of each finger into ``theta_trace`` (samples x 2).
    Returns (status, max_penetration) where status is -1 on success or the
    index of the first step that produced a non-finite state.
    """
    steps = torques.shape[0]
    theta = np.zeros((2, n))
    omega = np.zeros((2, n))
    theta_new = np.zeros((2, n))
    omega_new = np.zeros((2, n))
    alpha = np.zeros(n)
    frame = np.zeros(6)
    base = (-0.5 * separation, 0.5 * separation)
    sig = (-1.0, 1.0)
    max_pen = -1e300
    for step in range(steps):
        for f in range(2):
            depth = finger_step(theta[f], omega[f], base[f], sig[f], length, mass, k_joint,
                                c_joint, torques[step] * scales[f], shape, k_obj, c_obj, size,
                                cx, cy, half_width, True, gravity, dt,
                                theta_new[f], omega_new[f], alpha)
            if depth > max_pen:
                max_pen = depth
            for i in range(n):
                if not (math.isfinite(theta_new[f, i]) and math.isfinite(omega_new[f, i])):
                    return step, max_pen
        if (step + 1) % stride == 0:
            row = (step + 1) // stride - 1
            for f in range(2):
                imu_kernel(theta[f], omega[f], theta_new[f], omega_new[f], base[f], sig[f],
                           length, mount_link, mount_offset, gravity, dt, accel_bias,
                           gyro_bias, frame)
                for c in range(6):
                    if not math.isfinite(frame[c]):
                        return step, max_pen
                    signal[row, 6 * f + c] = frame[c]
                total = 0.0
                for i in range(n):
                    total += theta_new[f, i]
                theta_trace[row, f] = total
        for f in range(2):
            for i in range(n):
                theta[f, i] = theta_new[f, i]
                omega[f, i] = omega_new[f, i]
    return -1, max_pen
