"""Model predictive contouring control solved by real-time-iteration SQP.

Each control step linearizes the nominal-plus-residual model along the
shifted previous solution, condenses the horizon into one dense QP and
applies one (or a few) Gauss-Newton steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .kernels import dynamics as kd
from .kernels import mpcc as km
from .qp import SOLVED, solve_qp
from .track import Track, project, unwrap_progress
from .vehicle import DEFAULT_DT, DEFAULT_SUBSTEPS, VehicleParams

FAILED = -1


@dataclass(frozen=True)
class ControllerWeights:
    q_cont: float
    q_adv: float
    q_lag: float = 1000.0

    def __post_init__(self):
        if min(self.q_cont, self.q_adv, self.q_lag) < 0:
            raise ValueError("controller weights must be non-negative")


@dataclass
class MpccConfig:
    horizon: int = 20
    dt: float = DEFAULT_DT
    substeps: int = DEFAULT_SUBSTEPS
    delta_max: float = 0.40
    tau_min: float = -1.0
    tau_max: float = 1.0
    gamma_min: float = 1e-3
    gamma_max: float = 5.0
    r_input: tuple = (0.0, 0.0, 0.0)
    r_rate: tuple = (10.0, 0.1, 0.01)
    car_margin: float = 0.03
    slack_l1_factor: float = 1e3
    slack_l2: float = 100.0
    sqp_iterations: int = 1
    cold_start_iterations: int = 8
    cold_start_tau: float = 0.2
    qp_tol: float = 1e-8
    qp_max_iter: int = 40
    line_search_steps: int = 5
    prox: tuple = (1.0, 0.1, 0.1)

    def __post_init__(self):
        if self.horizon < 10:
            raise ValueError("horizon must be at least 10 stages")
        self.r_input = tuple(float(v) for v in self.r_input)
        self.r_rate = tuple(float(v) for v in self.r_rate)
        self.prox = np.asarray(self.prox, dtype=float)

    @property
    def vmin(self) -> np.ndarray:
        return np.array([-self.delta_max, self.tau_min, self.gamma_min])

    @property
    def vmax(self) -> np.ndarray:
        return np.array([self.delta_max, self.tau_max, self.gamma_max])


@dataclass
class AugmentedState:
    x: np.ndarray
    s: float

    @property
    def z(self) -> np.ndarray:
        return np.append(np.asarray(self.x, dtype=float)[:6], self.s)


@dataclass
class MpccSolution:
    inputs: np.ndarray          # (H, 2): delta, tau
    states: np.ndarray          # (H+1, 7) predicted augmented states
    gamma: np.ndarray           # (H,)
    status: int
    stage_costs: np.ndarray
    qp_iterations: int = 0
    qp_objective: float = np.nan
    qp_objective_at_guess: float = np.nan

    @property
    def ok(self) -> bool:
        return self.status == SOLVED

    @property
    def total_cost(self) -> float:
        return float(np.sum(self.stage_costs))


def _coef(residual) -> np.ndarray:
    if residual is None:
        return np.zeros((2, 2))
    return np.ascontiguousarray(residual.coefficients, dtype=float)


@dataclass
class MpccController:
    """Receding-horizon contouring controller with a warm-started input guess."""

    params: VehicleParams
    track: Track
    config: MpccConfig = field(default_factory=MpccConfig)
    _V: Optional[np.ndarray] = field(default=None, init=False, repr=False)
    _u_prev: np.ndarray = field(default_factory=lambda: np.zeros(3), init=False, repr=False)
    _s: Optional[float] = field(default=None, init=False, repr=False)
    _last: Optional[MpccSolution] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self._p = self.params.to_vector()
        self._track_arrays = self.track.kernel_arrays()

    def reset(self) -> None:
        self._V = None
        self._u_prev = np.zeros(3)
        self._s = None
        self._last = None

    @property
    def progress(self) -> Optional[float]:
        return self._s

    def _cold_guess(self, x) -> np.ndarray:
        cfg = self.config
        H = cfg.horizon
        V = np.zeros((H, 3))
        V[:, 1] = cfg.cold_start_tau
        V[:, 2] = np.clip(max(x[3], 0.5), cfg.gamma_min, cfg.gamma_max)
        return V

    def _width(self, Z) -> np.ndarray:
        hw = np.array([self.track.half_width(s) for s in Z[1:, 6]])
        return np.maximum(hw - self.config.car_margin, 0.01)

    def _weights_arrays(self, weights: ControllerWeights):
        cfg = self.config
        rho1 = cfg.slack_l1_factor * max(weights.q_cont, 1.0)
        return (np.asarray(cfg.r_input), np.asarray(cfg.r_rate), rho1, cfg.slack_l2)

    def solve(self, aug: AugmentedState, weights: ControllerWeights, residual=None,
              iterations: Optional[int] = None) -> MpccSolution:
        """Run RTI-SQP iterations from the current warm start."""
        cfg = self.config
        z0 = np.ascontiguousarray(aug.z, dtype=float)
        coef = _coef(residual)
        cold = self._V is None
        V = self._cold_guess(z0) if cold else self._V.copy()
        if iterations is None:
            iterations = cfg.cold_start_iterations if cold else cfg.sqp_iterations
        L, ds, xs, ys, th, kap = self._track_arrays
        r, rd, rho1, rho2 = self._weights_arrays(weights)
        vmin, vmax = cfg.vmin, cfg.vmax
        status = SOLVED
        qp_it = 0
        obj = obj0 = np.nan
        for _ in range(max(iterations, 1)):
            Z, A, B = km.rollout_linearize(z0, V, self._p, cfg.dt, cfg.substeps, coef)
            w = self._width(Z)
            P, q, G, h, lb, ub = km.build_qp(
                Z, A, B, V, self._u_prev, L, ds, xs, ys, th, kap,
                weights.q_cont, weights.q_lag, weights.q_adv, r, rd, vmin, vmax, w, rho1, rho2)
            nu = 3 * cfg.horizon
            P[np.arange(nu), np.arange(nu)] += np.tile(cfg.prox, cfg.horizon)
            res = solve_qp(P, q, G, h, lb, ub, tol=cfg.qp_tol, max_iter=cfg.qp_max_iter)
            qp_it += res.iterations
            if not res.ok or not np.all(np.isfinite(res.x)):
                status = FAILED
                break
            H = cfg.horizon
            # guess point: dV = 0 with the smallest feasible slack
            slack0 = np.maximum(np.maximum(-h[0::2], -h[1::2]), 0.0)
            x0 = np.concatenate([np.zeros(nu), slack0])
            obj0 = 0.5 * x0 @ P @ x0 + q @ x0
            obj = 0.5 * res.x @ P @ res.x + q @ res.x
            V = self._line_search(z0, V, res.x[:nu].reshape(H, 3), coef, weights, Z)

        if status != SOLVED:
            if self._last is not None:
                return self._failed_solution(z0, coef, weights)
            V = self._cold_guess(z0)

        Z = km.rollout(z0, V, self._p, cfg.dt, cfg.substeps, coef)
        costs = km.stage_costs(Z, V, self._u_prev, L, ds, xs, ys, th, kap,
                               weights.q_cont, weights.q_lag, weights.q_adv,
                               r, rd, self._width(Z), rho1, rho2)
        sol = MpccSolution(inputs=V[:, :2].copy(), states=Z, gamma=V[:, 2].copy(),
                           status=status, stage_costs=costs, qp_iterations=qp_it,
                           qp_objective=obj, qp_objective_at_guess=obj0)
        self._V = V
        self._last = sol
        return sol

    def _cost(self, z0, V, coef, weights, Z=None) -> float:
        cfg = self.config
        if Z is None:
            Z = km.rollout(z0, V, self._p, cfg.dt, cfg.substeps, coef)
        L, ds, xs, ys, th, kap = self._track_arrays
        r, rd, rho1, rho2 = self._weights_arrays(weights)
        return float(np.sum(km.stage_costs(Z, V, self._u_prev, L, ds, xs, ys, th, kap,
                                           weights.q_cont, weights.q_lag, weights.q_adv,
                                           r, rd, self._width(Z), rho1, rho2)))

    def _line_search(self, z0, V, dV, coef, weights, Z) -> np.ndarray:
        """Backtrack on the nonlinear cost; the full step is tried first."""
        cfg = self.config
        base = self._cost(z0, V, coef, weights, Z)
        alpha = 1.0
        for _ in range(cfg.line_search_steps):
            cand = np.clip(V + alpha * dV, cfg.vmin, cfg.vmax)
            if self._cost(z0, cand, coef, weights) < base:
                return cand
            alpha *= 0.5
        return np.clip(V + alpha * dV, cfg.vmin, cfg.vmax)

    def _failed_solution(self, z0, coef, weights) -> MpccSolution:
        cfg = self.config
        V = np.vstack([self._V[1:], self._V[-1:]])
        Z = km.rollout(z0, V, self._p, cfg.dt, cfg.substeps, coef)
        L, ds, xs, ys, th, kap = self._track_arrays
        r, rd, rho1, rho2 = self._weights_arrays(weights)
        costs = km.stage_costs(Z, V, self._u_prev, L, ds, xs, ys, th, kap,
                               weights.q_cont, weights.q_lag, weights.q_adv,
                               r, rd, self._width(Z), rho1, rho2)
        self._V = V
        return MpccSolution(inputs=V[:, :2].copy(), states=Z, gamma=V[:, 2].copy(),
                            status=FAILED, stage_costs=costs)

    def shift(self) -> None:
        if self._V is not None:
            self._V = np.vstack([self._V[1:], self._V[-1:]])

    def step_closed_loop(self, x_est, weights: ControllerWeights, residual=None):
        """Solve for the current estimate and return ``(input, diagnostics)``.

        The first stage input is applied; the warm start is shifted by one
        stage for the next call.
        """
        x_est = np.asarray(x_est, dtype=float)[:6]
        if self._s is None:
            s = project(self.track, x_est[:2], 0.0, window=self.track.total_length)
        else:
            hint = self._s
            if self._V is not None:
                hint = self._s + self.config.dt * self._V[0, 2]
            s_loc = project(self.track, x_est[:2], hint)
            s = self._s + unwrap_progress(self.track, self._s, s_loc)
        sol = self.solve(AugmentedState(x_est, s), weights, residual)
        u = sol.inputs[0].copy()
        self._u_prev = np.array([u[0], u[1], sol.gamma[0]])
        self._s = s
        diag = {
            "s": s,
            "status": sol.status,
            "qp_iterations": sol.qp_iterations,
            "predicted_next": sol.states[1, :6].copy(),
            "cost": sol.total_cost,
        }
        self.shift()
        return u, diag
