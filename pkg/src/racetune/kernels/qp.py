"""Dense primal-dual interior-point solver for convex QPs.

    minimize    0.5 x'Px + q'x
    subject to  Gx <= h,  lb <= x <= ub

Infinite bounds are ignored.  Mehrotra predictor-corrector steps on the
reduced (normal-equation) system; the box is handled as a diagonal term.
"""

import numpy as np

from .._accel import jit

SOLVED = 0
MAX_ITER = 1
NUMERICAL = 2


@jit
def _step_length(s, ds, frac):
    a = 1.0
    for i in range(s.shape[0]):
        if ds[i] < 0.0:
            r = -frac * s[i] / ds[i]
            if r < a:
                a = r
    return a


@jit
def _factor(K, reg):
    """Cholesky with escalating diagonal shifts when round-off bites."""
    shift = 0.0
    n = K.shape[0]
    for _ in range(8):
        try:
            return np.linalg.cholesky(K + shift * np.eye(n)), True
        except Exception:
            shift = max(shift * 100.0, 1e-10 * (1.0 + np.max(np.abs(np.diag(K)))))
    return np.eye(n), False


@jit
def _direction(P, G, x, zg, zl, zu, sg, sl, su, rd, rpg, rpl, rpu,
               rcg, rcl, rcu, lmask, umask, L):
    # rhs = -rd + A' S^-1 (rc - Z rp)
    tg = (rcg - zg * rpg) / sg
    tl = (rcl - zl * rpl) / sl * lmask
    tu = (rcu - zu * rpu) / su * umask
    rhs = -rd + G.T @ tg - tl + tu
    y = np.linalg.solve(L, rhs)
    dx = np.linalg.solve(L.T, y)
    gdx = G @ dx
    dsg = -rpg - gdx
    dsl = (-rpl + dx) * lmask
    dsu = (-rpu - dx) * umask
    dzg = (-rcg - zg * dsg) / sg
    dzl = (-rcl - zl * dsl) / sl * lmask
    dzu = (-rcu - zu * dsu) / su * umask
    return dx, dsg, dsl, dsu, dzg, dzl, dzu


@jit
def solve_qp(P, q, G, h, lb, ub, tol, max_iter):
    """Return ``(x, z_ineq, z_lower, z_upper, status, iterations)``."""
    n = q.shape[0]
    m = h.shape[0]
    lmask = np.zeros(n)
    umask = np.zeros(n)
    lbf = np.zeros(n)
    ubf = np.zeros(n)
    for j in range(n):
        if np.isfinite(lb[j]):
            lmask[j] = 1.0
            lbf[j] = lb[j]
        if np.isfinite(ub[j]):
            umask[j] = 1.0
            ubf[j] = ub[j]
    n_box = lmask.sum() + umask.sum()
    n_con = m + n_box

    x = np.zeros(n)
    for j in range(n):
        if lmask[j] > 0 and umask[j] > 0:
            x[j] = 0.5 * (lbf[j] + ubf[j])
        elif lmask[j] > 0:
            x[j] = lbf[j] + 1.0
        elif umask[j] > 0:
            x[j] = ubf[j] - 1.0
    sg = np.maximum(h - G @ x, 1.0)
    sl = np.ones(n)
    su = np.ones(n)
    for j in range(n):
        if lmask[j] > 0:
            sl[j] = max(x[j] - lbf[j], 1.0)
        if umask[j] > 0:
            su[j] = max(ubf[j] - x[j], 1.0)
    zg = np.ones(m)
    zl = lmask.copy()
    zu = umask.copy()

    qscale = 1.0 + np.max(np.abs(q)) if n > 0 else 1.0
    hscale = 1.0
    if m > 0:
        hscale = max(hscale, 1.0 + np.max(np.abs(h)))
    for j in range(n):
        if lmask[j] > 0:
            hscale = max(hscale, 1.0 + abs(lbf[j]))
        if umask[j] > 0:
            hscale = max(hscale, 1.0 + abs(ubf[j]))
    reg = 1e-13 * (1.0 + np.max(np.abs(P)))

    status = MAX_ITER
    it = 0
    best_merit = np.inf
    bx = x.copy()
    bzg = zg.copy()
    bzl = zl.copy()
    bzu = zu.copy()
    for it in range(1, max_iter + 1):
        rd = P @ x + q + G.T @ zg - zl + zu
        rpg = G @ x + sg - h
        rpl = (-x + sl + lbf) * lmask
        rpu = (x + su - ubf) * umask
        gap = sg @ zg + (sl * zl) @ lmask + (su * zu) @ umask
        mu = gap / max(n_con, 1.0)
        res_d = np.max(np.abs(rd)) if n > 0 else 0.0
        res_p = 0.0
        if m > 0:
            res_p = np.max(np.abs(rpg))
        if n_box > 0:
            res_p = max(res_p, np.max(np.abs(rpl)), np.max(np.abs(rpu)))
        if not (np.isfinite(res_d) and np.isfinite(res_p) and np.isfinite(mu)):
            status = NUMERICAL
            break
        merit = max(res_d / qscale, res_p / hscale, mu)
        if merit < best_merit:
            best_merit = merit
            bx[:] = x
            bzg[:] = zg
            bzl[:] = zl
            bzu[:] = zu
        if merit <= tol:
            status = SOLVED
            break

        wg = zg / sg
        K = P + G.T @ (G * wg.reshape(-1, 1))
        for j in range(n):
            K[j, j] += zl[j] / sl[j] * lmask[j] + zu[j] / su[j] * umask[j] + reg
        L, factored = _factor(K, reg)
        if not factored:
            status = NUMERICAL
            break

        # predictor
        rcg = sg * zg
        rcl = sl * zl * lmask
        rcu = su * zu * umask
        dx, dsg, dsl, dsu, dzg, dzl, dzu = _direction(
            P, G, x, zg, zl, zu, sg, sl, su, rd, rpg, rpl, rpu,
            rcg, rcl, rcu, lmask, umask, L)
        a = min(_step_length(sg, dsg, 1.0), _step_length(zg, dzg, 1.0),
                _step_length(sl, dsl, 1.0), _step_length(zl, dzl, 1.0),
                _step_length(su, dsu, 1.0), _step_length(zu, dzu, 1.0))
        gap_aff = ((sg + a * dsg) @ (zg + a * dzg)
                   + ((sl + a * dsl) * (zl + a * dzl)) @ lmask
                   + ((su + a * dsu) * (zu + a * dzu)) @ umask)
        sigma = (gap_aff / max(gap, 1e-300)) ** 3
        if sigma > 1.0:
            sigma = 1.0

        # corrector
        rcg = sg * zg + dsg * dzg - sigma * mu
        rcl = (sl * zl + dsl * dzl - sigma * mu) * lmask
        rcu = (su * zu + dsu * dzu - sigma * mu) * umask
        dx, dsg, dsl, dsu, dzg, dzl, dzu = _direction(
            P, G, x, zg, zl, zu, sg, sl, su, rd, rpg, rpl, rpu,
            rcg, rcl, rcu, lmask, umask, L)
        a = min(_step_length(sg, dsg, 0.99), _step_length(zg, dzg, 0.99),
                _step_length(sl, dsl, 0.99), _step_length(zl, dzl, 0.99),
                _step_length(su, dsu, 0.99), _step_length(zu, dzu, 0.99))
        x = x + a * dx
        sg = sg + a * dsg
        zg = zg + a * dzg
        for j in range(n):
            if lmask[j] > 0:
                sl[j] += a * dsl[j]
                zl[j] += a * dzl[j]
            if umask[j] > 0:
                su[j] += a * dsu[j]
                zu[j] += a * dzu[j]
    if status != SOLVED and best_merit <= 1e3 * tol:
        # stalled on round-off after reaching a usable accuracy
        status = SOLVED
    return bx, bzg, bzl, bzu, status, it
