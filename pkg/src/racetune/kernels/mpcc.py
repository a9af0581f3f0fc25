"""Condensed RTI-SQP subproblem of the contouring controller.

Augmented state ``z = [px, py, psi, vx, vy, omega, s]``, stage input
``v = [delta, tau, gamma]`` with ``s+ = s + gamma*dt``.  Decision vector of
the condensed QP: ``[dv_0, ..., dv_{H-1}, slack_1, ..., slack_H]``.
"""

import math

import numpy as np

from .._accel import jit
from .dynamics import model_step, model_step_jacobian

NZ = 7
NV = 3


@jit
def track_ref(s, length, ds, xs, ys, th, kap):
    """Centerline point, tangent angle and curvature at arc position ``s``."""
    sw = s - length * math.floor(s / length)
    u = sw / ds
    i = int(math.floor(u))
    n = xs.shape[0] - 1
    if i >= n:
        i = n - 1
    if i < 0:
        i = 0
    f = u - i
    xr = xs[i] + f * (xs[i + 1] - xs[i])
    yr = ys[i] + f * (ys[i + 1] - ys[i])
    t = th[i] + f * (th[i + 1] - th[i])
    k = kap[i] + f * (kap[i + 1] - kap[i])
    return xr, yr, t, k


@jit
def contouring_errors(px, py, s, length, ds, xs, ys, th, kap):
    xr, yr, t, k = track_ref(s, length, ds, xs, ys, th, kap)
    c = math.cos(t)
    sn = math.sin(t)
    dx = px - xr
    dy = py - yr
    e_cont = -sn * dx + c * dy
    e_lag = -(c * dx + sn * dy)
    return e_cont, e_lag, t, k


@jit
def rollout(z0, V, p, dt, substeps, coef):
    H = V.shape[0]
    Z = np.empty((H + 1, NZ))
    Z[0] = z0
    for i in range(H):
        y = model_step(Z[i, :6].copy(), V[i, :2].copy(), p, dt, substeps, coef)
        Z[i + 1, :6] = y
        Z[i + 1, 6] = Z[i, 6] + dt * V[i, 2]
    return Z


@jit
def rollout_linearize(z0, V, p, dt, substeps, coef):
    H = V.shape[0]
    Z = np.empty((H + 1, NZ))
    A = np.zeros((H, NZ, NZ))
    B = np.zeros((H, NZ, NV))
    Z[0] = z0
    for i in range(H):
        y, jx, ju = model_step_jacobian(Z[i, :6].copy(), V[i, :2].copy(), p, dt, substeps, coef)
        Z[i + 1, :6] = y
        Z[i + 1, 6] = Z[i, 6] + dt * V[i, 2]
        A[i, :6, :6] = jx
        A[i, 6, 6] = 1.0
        B[i, :6, :2] = ju
        B[i, 6, 2] = dt
    return Z, A, B


@jit
def stage_costs(Z, V, u_prev, length, ds, xs, ys, th, kap, q_cont, q_lag, q_adv,
                r, rd, w_eff, rho1, rho2):
    """Nonlinear stage cost of a trajectory (slack at its minimal value)."""
    H = V.shape[0]
    out = np.empty(H)
    for i in range(H):
        ec, el, _, _ = contouring_errors(Z[i + 1, 0], Z[i + 1, 1], Z[i + 1, 6],
                                         length, ds, xs, ys, th, kap)
        sl = max(abs(ec) - w_eff[i], 0.0)
        c = q_cont * ec * ec + q_lag * el * el - q_adv * V[i, 2]
        c += rho1 * sl + rho2 * sl * sl
        for j in range(NV):
            prev = u_prev[j] if i == 0 else V[i - 1, j]
            dv = V[i, j] - prev
            c += rd[j] * dv * dv + r[j] * V[i, j] * V[i, j]
        out[i] = c
    return out


@jit
def build_qp(Z, A, B, V, u_prev, length, ds, xs, ys, th, kap, q_cont, q_lag, q_adv,
             r, rd, vmin, vmax, w_eff, rho1, rho2):
    """Gauss-Newton QP in the input deviations ``dV`` around ``(Z, V)``."""
    H = V.shape[0]
    nu = NV * H
    nvar = nu + H

    # condensed sensitivities of the augmented state to dV
    gam = np.zeros((H + 1, NZ, nu))
    for i in range(H):
        gam[i + 1] = A[i] @ gam[i]
        for a in range(NZ):
            for b in range(NV):
                gam[i + 1, a, NV * i + b] += B[i, a, b]

    Mc = np.zeros((H, nu))
    Ml = np.zeros((H, nu))
    ec = np.zeros(H)
    el = np.zeros(H)
    for i in range(H):
        z = Z[i + 1]
        e_c, e_l, t, k = contouring_errors(z[0], z[1], z[6], length, ds, xs, ys, th, kap)
        ec[i] = e_c
        el[i] = e_l
        sn = math.sin(t)
        c = math.cos(t)
        g = gam[i + 1]
        # d e_cont / d(px, py, s) = (-sin, cos, k*e_lag); d e_lag = (-cos, -sin, 1 - k*e_cont)
        Mc[i] = -sn * g[0] + c * g[1] + (k * e_l) * g[6]
        Ml[i] = -c * g[0] - sn * g[1] + (1.0 - k * e_c) * g[6]

    P = np.zeros((nvar, nvar))
    q = np.zeros(nvar)
    Puu = 2.0 * (q_cont * (Mc.T @ Mc) + q_lag * (Ml.T @ Ml))
    P[:nu, :nu] = Puu
    q[:nu] = 2.0 * (q_cont * (Mc.T @ ec) + q_lag * (Ml.T @ el))

    # input-rate and input-magnitude regularisation
    for i in range(H):
        for j in range(NV):
            a = NV * i + j
            prev = u_prev[j] if i == 0 else V[i - 1, j]
            dv = V[i, j] - prev
            P[a, a] += 2.0 * (rd[j] + r[j])
            q[a] += 2.0 * rd[j] * dv + 2.0 * r[j] * V[i, j]
            if i > 0:
                b = a - NV
                P[b, b] += 2.0 * rd[j]
                P[a, b] -= 2.0 * rd[j]
                P[b, a] -= 2.0 * rd[j]
                q[b] -= 2.0 * rd[j] * dv
        q[NV * i + 2] -= q_adv

    for i in range(H):
        P[nu + i, nu + i] = 2.0 * rho2
        q[nu + i] = rho1

    G = np.zeros((2 * H, nvar))
    h = np.zeros(2 * H)
    for i in range(H):
        G[2 * i, :nu] = Mc[i]
        G[2 * i, nu + i] = -1.0
        h[2 * i] = w_eff[i] - ec[i]
        G[2 * i + 1, :nu] = -Mc[i]
        G[2 * i + 1, nu + i] = -1.0
        h[2 * i + 1] = w_eff[i] + ec[i]

    lb = np.empty(nvar)
    ub = np.empty(nvar)
    for i in range(H):
        for j in range(NV):
            lb[NV * i + j] = vmin[j] - V[i, j]
            ub[NV * i + j] = vmax[j] - V[i, j]
    for i in range(H):
        lb[nu + i] = 0.0
        ub[nu + i] = np.inf
    return P, q, G, h, lb, ub
