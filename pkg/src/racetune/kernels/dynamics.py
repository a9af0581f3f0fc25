"""Bicycle-model kernels operating on flat float arrays.

State layout ``x = [px, py, psi, vx, vy, omega]``, input ``u = [delta, tau]``.
Parameters are packed into a vector with the ``P_*`` indices below so the
kernels can be compiled without object support.
"""

import math

import numpy as np

from .._accel import jit

P_M = 0
P_IZ = 1
P_LF = 2
P_LR = 3
P_BF = 4
P_CF = 5
P_DF = 6
P_BR = 7
P_CR = 8
P_DR = 9
P_CM1 = 10
P_CM2 = 11
P_CR0 = 12
P_CR2 = 13
P_VBLEND = 14
N_PARAMS = 15

NX = 6
NU = 2


@jit
def slip_angles(x, u, p):
    vxr = max(x[3], p[P_VBLEND])
    alpha_f = math.atan((x[4] + p[P_LF] * x[5]) / vxr) - u[0]
    alpha_r = math.atan((x[4] - p[P_LR] * x[5]) / vxr)
    return alpha_f, alpha_r


@jit
def pacejka(alpha, b, c, d):
    return d * math.sin(c * math.atan(b * alpha))


@jit
def tire_forces(x, u, p):
    alpha_f, alpha_r = slip_angles(x, u, p)
    ff = pacejka(alpha_f, p[P_BF], p[P_CF], p[P_DF])
    fr = pacejka(alpha_r, p[P_BR], p[P_CR], p[P_DR])
    vx = x[3]
    fx = (p[P_CM1] - p[P_CM2] * vx) * u[1] - p[P_CR0] - p[P_CR2] * vx * vx
    return ff, fr, fx


@jit
def continuous_dynamics(x, u, p):
    ff, fr, fx = tire_forces(x, u, p)
    m = p[P_M]
    psi = x[2]
    vx = x[3]
    vy = x[4]
    om = x[5]
    sd = math.sin(u[0])
    cd = math.cos(u[0])
    out = np.empty(NX)
    out[0] = vx * math.cos(psi) - vy * math.sin(psi)
    out[1] = vx * math.sin(psi) + vy * math.cos(psi)
    out[2] = om
    out[3] = (fx - ff * sd + m * vy * om) / m
    out[4] = (fr + ff * cd - m * vx * om) / m
    out[5] = (ff * p[P_LF] * cd - fr * p[P_LR]) / p[P_IZ]
    return out


@jit
def _pacejka_slope(alpha, b, c, d):
    ba = b * alpha
    return d * math.cos(c * math.atan(ba)) * c * b / (1.0 + ba * ba)


@jit
def continuous_jacobian(x, u, p):
    """Analytic ``(df/dx, df/du)`` of :func:`continuous_dynamics`."""
    m = p[P_M]
    iz = p[P_IZ]
    lf = p[P_LF]
    lr = p[P_LR]
    psi = x[2]
    vx = x[3]
    vy = x[4]
    om = x[5]
    delta = u[0]
    tau = u[1]

    if vx > p[P_VBLEND]:
        vxr = vx
        dvxr = 1.0
    else:
        vxr = p[P_VBLEND]
        dvxr = 0.0
    rf = (vy + lf * om) / vxr
    rr = (vy - lr * om) / vxr
    alpha_f = math.atan(rf) - delta
    alpha_r = math.atan(rr)
    gf = 1.0 / (1.0 + rf * rf)
    gr = 1.0 / (1.0 + rr * rr)
    # d alpha / d (vx, vy, omega)
    af_vx = -gf * rf / vxr * dvxr
    af_vy = gf / vxr
    af_om = gf * lf / vxr
    ar_vx = -gr * rr / vxr * dvxr
    ar_vy = gr / vxr
    ar_om = -gr * lr / vxr

    ff = pacejka(alpha_f, p[P_BF], p[P_CF], p[P_DF])
    fr = pacejka(alpha_r, p[P_BR], p[P_CR], p[P_DR])
    sf = _pacejka_slope(alpha_f, p[P_BF], p[P_CF], p[P_DF])
    sr = _pacejka_slope(alpha_r, p[P_BR], p[P_CR], p[P_DR])

    fx_vx = -p[P_CM2] * tau - 2.0 * p[P_CR2] * vx
    fx_tau = p[P_CM1] - p[P_CM2] * vx

    sd = math.sin(delta)
    cd = math.cos(delta)
    cp = math.cos(psi)
    sp = math.sin(psi)

    a = np.zeros((NX, NX))
    b = np.zeros((NX, NU))

    a[0, 2] = -vx * sp - vy * cp
    a[0, 3] = cp
    a[0, 4] = -sp
    a[1, 2] = vx * cp - vy * sp
    a[1, 3] = sp
    a[1, 4] = cp
    a[2, 5] = 1.0

    # vx_dot = (fx - ff sd)/m + vy om
    a[3, 3] = (fx_vx - sf * af_vx * sd) / m
    a[3, 4] = -sf * af_vy * sd / m + om
    a[3, 5] = -sf * af_om * sd / m + vy
    b[3, 0] = (-(-sf) * sd - ff * cd) / m
    b[3, 1] = fx_tau / m

    # vy_dot = (fr + ff cd)/m - vx om
    a[4, 3] = (sr * ar_vx + sf * af_vx * cd) / m - om
    a[4, 4] = (sr * ar_vy + sf * af_vy * cd) / m
    a[4, 5] = (sr * ar_om + sf * af_om * cd) / m - vx
    b[4, 0] = (-sf * cd - ff * sd) / m

    # om_dot = (ff lf cd - fr lr)/iz
    a[5, 3] = (sf * af_vx * lf * cd - sr * ar_vx * lr) / iz
    a[5, 4] = (sf * af_vy * lf * cd - sr * ar_vy * lr) / iz
    a[5, 5] = (sf * af_om * lf * cd - sr * ar_om * lr) / iz
    b[5, 0] = (-sf * lf * cd - ff * lf * sd) / iz
    return a, b


@jit
def rk4_step(x, u, p, dt, substeps):
    h = dt / substeps
    y = x.copy()
    for _ in range(substeps):
        k1 = continuous_dynamics(y, u, p)
        k2 = continuous_dynamics(y + 0.5 * h * k1, u, p)
        k3 = continuous_dynamics(y + 0.5 * h * k2, u, p)
        k4 = continuous_dynamics(y + h * k3, u, p)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y


@jit
def rk4_step_jacobian(x, u, p, dt, substeps):
    """RK4 step plus its exact Jacobians w.r.t. state and input."""
    h = dt / substeps
    eye = np.eye(NX)
    y = x.copy()
    jx = np.eye(NX)
    ju = np.zeros((NX, NU))
    for _ in range(substeps):
        k1 = continuous_dynamics(y, u, p)
        a1, b1 = continuous_jacobian(y, u, p)
        y2 = y + 0.5 * h * k1
        k2 = continuous_dynamics(y2, u, p)
        a2, b2 = continuous_jacobian(y2, u, p)
        d2x = eye + 0.5 * h * a1
        d2u = 0.5 * h * b1
        k2x = a2 @ d2x
        k2u = a2 @ d2u + b2
        y3 = y + 0.5 * h * k2
        k3 = continuous_dynamics(y3, u, p)
        a3, b3 = continuous_jacobian(y3, u, p)
        d3x = eye + 0.5 * h * k2x
        d3u = 0.5 * h * k2u
        k3x = a3 @ d3x
        k3u = a3 @ d3u + b3
        y4 = y + h * k3
        k4 = continuous_dynamics(y4, u, p)
        a4, b4 = continuous_jacobian(y4, u, p)
        d4x = eye + h * k3x
        d4u = h * k3u
        k4x = a4 @ d4x
        k4u = a4 @ d4u + b4
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        sx = eye + (h / 6.0) * (a1 + 2.0 * k2x + 2.0 * k3x + k4x)
        su = (h / 6.0) * (b1 + 2.0 * k2u + 2.0 * k3u + k4u)
        ju = sx @ ju + su
        jx = sx @ jx
    return y, jx, ju


@jit
def taylor_features(x, u, p):
    alpha_f, alpha_r = slip_angles(x, u, p)
    phi = np.empty(2)
    phi[0] = math.sin(p[P_CF] * math.atan(p[P_BF] * alpha_f)) * math.cos(u[0])
    phi[1] = math.sin(p[P_CR] * math.atan(p[P_BR] * alpha_r))
    return phi


@jit
def taylor_features_jacobian(x, u, p):
    """Features and their derivatives w.r.t. state (2x6) and input (2x2)."""
    lf = p[P_LF]
    lr = p[P_LR]
    vx = x[3]
    vy = x[4]
    om = x[5]
    delta = u[0]
    if vx > p[P_VBLEND]:
        vxr = vx
        dvxr = 1.0
    else:
        vxr = p[P_VBLEND]
        dvxr = 0.0
    rf = (vy + lf * om) / vxr
    rr = (vy - lr * om) / vxr
    alpha_f = math.atan(rf) - delta
    alpha_r = math.atan(rr)
    gf = 1.0 / (1.0 + rf * rf)
    gr = 1.0 / (1.0 + rr * rr)
    cd = math.cos(delta)
    sd = math.sin(delta)

    sin_f = math.sin(p[P_CF] * math.atan(p[P_BF] * alpha_f))
    sin_r = math.sin(p[P_CR] * math.atan(p[P_BR] * alpha_r))
    slope_f = _pacejka_slope(alpha_f, p[P_BF], p[P_CF], 1.0)
    slope_r = _pacejka_slope(alpha_r, p[P_BR], p[P_CR], 1.0)

    phi = np.empty(2)
    phi[0] = sin_f * cd
    phi[1] = sin_r
    jx = np.zeros((2, NX))
    ju = np.zeros((2, NU))
    jx[0, 3] = slope_f * (-gf * rf / vxr * dvxr) * cd
    jx[0, 4] = slope_f * (gf / vxr) * cd
    jx[0, 5] = slope_f * (gf * lf / vxr) * cd
    ju[0, 0] = -slope_f * cd - sin_f * sd
    jx[1, 3] = slope_r * (-gr * rr / vxr * dvxr)
    jx[1, 4] = slope_r * (gr / vxr)
    jx[1, 5] = slope_r * (-gr * lr / vxr)
    return phi, jx, ju


@jit
def model_step(x, u, p, dt, substeps, coef):
    """Nominal RK4 step plus the learned residual on (vy, omega).

    ``coef`` is 2x2: row 0 multiplies the features for vy, row 1 for omega.
    """
    y = rk4_step(x, u, p, dt, substeps)
    phi = taylor_features(x, u, p)
    y[4] += coef[0, 0] * phi[0] + coef[0, 1] * phi[1]
    y[5] += coef[1, 0] * phi[0] + coef[1, 1] * phi[1]
    return y


@jit
def model_step_jacobian(x, u, p, dt, substeps, coef):
    y, jx, ju = rk4_step_jacobian(x, u, p, dt, substeps)
    phi, fx, fu = taylor_features_jacobian(x, u, p)
    y[4] += coef[0, 0] * phi[0] + coef[0, 1] * phi[1]
    y[5] += coef[1, 0] * phi[0] + coef[1, 1] * phi[1]
    jx[4, :] += coef[0, 0] * fx[0, :] + coef[0, 1] * fx[1, :]
    jx[5, :] += coef[1, 0] * fx[0, :] + coef[1, 1] * fx[1, :]
    ju[4, :] += coef[0, 0] * fu[0, :] + coef[0, 1] * fu[1, :]
    ju[5, :] += coef[1, 0] * fu[0, :] + coef[1, 1] * fu[1, :]
    return y, jx, ju


@jit
def model_step_fd_jacobian(x, u, p, dt, substeps, coef, eps):
    """Central finite-difference Jacobian of :func:`model_step` w.r.t. state."""
    jac = np.empty((NX, NX))
    for j in range(NX):
        xp = x.copy()
        xm = x.copy()
        xp[j] += eps
        xm[j] -= eps
        fp = model_step(xp, u, p, dt, substeps, coef)
        fm = model_step(xm, u, p, dt, substeps, coef)
        jac[:, j] = (fp - fm) / (2.0 * eps)
    return jac


@jit
def simulate_steps(x0, inputs, p, dt, substeps, noise_std, noise):
    """Roll the plant forward; ``noise`` holds pre-drawn standard normals."""
    n = inputs.shape[0]
    out = np.empty((n + 1, NX))
    out[0] = x0
    y = x0.copy()
    for k in range(n):
        y = rk4_step(y, inputs[k], p, dt, substeps)
        for j in range(3):
            y[3 + j] += noise_std[j] * noise[k, j]
        out[k + 1] = y
    return out
