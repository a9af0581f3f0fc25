"""Public wrapper around the interior-point QP kernel."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import qp as _k

SOLVED = _k.SOLVED
MAX_ITER = _k.MAX_ITER
NUMERICAL = _k.NUMERICAL


@dataclass
class QPResult:
    x: np.ndarray
    z_ineq: np.ndarray
    z_lower: np.ndarray
    z_upper: np.ndarray
    status: int
    iterations: int

    @property
    def ok(self) -> bool:
        return self.status == SOLVED


def solve_qp(P, q, G=None, h=None, lb=None, ub=None, tol: float = 1e-9,
             max_iter: int = 60) -> QPResult:
    q = np.ascontiguousarray(q, dtype=float)
    n = q.shape[0]
    P = np.ascontiguousarray(P, dtype=float)
    G = np.zeros((0, n)) if G is None else np.ascontiguousarray(G, dtype=float).reshape(-1, n)
    h = np.zeros(0) if h is None else np.ascontiguousarray(h, dtype=float)
    lb = np.full(n, -np.inf) if lb is None else np.ascontiguousarray(np.broadcast_to(lb, (n,)), dtype=float)
    ub = np.full(n, np.inf) if ub is None else np.ascontiguousarray(np.broadcast_to(ub, (n,)), dtype=float)
    try:
        x, zg, zl, zu, status, it = _k.solve_qp(P, q, G, h, lb, ub, float(tol), int(max_iter))
    except np.linalg.LinAlgError:
        return QPResult(np.full(n, np.nan), np.full(len(h), np.nan), np.zeros(n), np.zeros(n),
                        NUMERICAL, 0)
    return QPResult(x, zg, zl, zu, int(status), int(it))


def kkt_residuals(P, q, G, h, lb, ub, res: QPResult) -> dict:
    """Stationarity, primal/dual feasibility and complementarity residuals."""
    P = np.asarray(P, float)
    q = np.asarray(q, float)
    n = len(q)
    G = np.zeros((0, n)) if G is None else np.asarray(G, float).reshape(-1, n)
    h = np.zeros(0) if h is None else np.asarray(h, float)
    lb = np.full(n, -np.inf) if lb is None else np.broadcast_to(np.asarray(lb, float), (n,))
    ub = np.full(n, np.inf) if ub is None else np.broadcast_to(np.asarray(ub, float), (n,))
    x = res.x
    lm = np.isfinite(lb)
    um = np.isfinite(ub)
    zl = np.where(lm, res.z_lower, 0.0)
    zu = np.where(um, res.z_upper, 0.0)
    stat = P @ x + q + G.T @ res.z_ineq - zl + zu
    slack_g = h - G @ x
    slack_l = np.where(lm, x - np.where(lm, lb, 0.0), 0.0)
    slack_u = np.where(um, np.where(um, ub, 0.0) - x, 0.0)
    primal = np.concatenate([np.maximum(-slack_g, 0), np.maximum(-slack_l, 0), np.maximum(-slack_u, 0)])
    dual = np.concatenate([np.maximum(-res.z_ineq, 0), np.maximum(-zl, 0), np.maximum(-zu, 0)])
    comp = np.concatenate([res.z_ineq * slack_g, zl * slack_l, zu * slack_u])
    mx = lambda a: float(np.max(np.abs(a))) if a.size else 0.0
    return {"stationarity": mx(stat), "primal": mx(primal), "dual": mx(dual),
            "complementarity": mx(comp)}
