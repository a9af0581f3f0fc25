"""Closed-loop lap simulation: plant, pose measurement, EKF and MPCC at 35 Hz.

A :class:`Session` keeps one car on track across laps so consecutive laps
have flying starts.  Lap time is the interval between two interpolated
crossings of the start line ``s = 0``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .config import Config, ScenarioSpec, load_config
from .ekf import ekf_init, ekf_predict, ekf_update
from .kernels import dynamics as kd
from .mpcc import ControllerWeights, MpccConfig, MpccController
from .residual import TelemetryLog, context_from_lap
from .track import Track, boundary_margin, contouring_lag_errors, load_track, project
from .vehicle import VehicleParams

TELEMETRY_COLUMNS = (
    "t", "px", "py", "psi", "vx", "vy", "omega", "delta", "tau",
    "ekf_px", "ekf_py", "ekf_psi", "ekf_vx", "ekf_vy", "ekf_omega",
    "s", "e_cont", "solver_status", "pred_err_vy", "pred_err_omega",
)


@dataclass
class Environment:
    """Everything a simulation needs that is fixed by the configuration."""

    config: Config
    track: Track
    nominal: VehicleParams

    @classmethod
    def from_config(cls, config: Optional[Config] = None, track_path=None) -> "Environment":
        config = config or load_config()
        path = track_path if track_path is not None else config.track_path()
        return cls(config, load_track(path, config.track.ds), config.vehicle)

    def mpcc_config(self) -> MpccConfig:
        c = self.config.mpcc
        return MpccConfig(
            horizon=c.horizon, dt=self.config.simulation.dt,
            substeps=self.config.simulation.substeps, delta_max=c.delta_max,
            gamma_max=c.gamma_max, r_input=c.r_input, r_rate=c.r_rate, prox=c.prox,
            car_margin=c.car_margin, slack_l1_factor=c.slack_l1_factor,
            slack_l2=c.slack_l2, sqp_iterations=c.sqp_iterations,
            cold_start_iterations=c.cold_start_iterations)

    def weights(self, q_cont: float, q_adv: float) -> ControllerWeights:
        return ControllerWeights(q_cont=q_cont, q_adv=q_adv, q_lag=self.config.mpcc.q_lag)

    def default_weights(self) -> ControllerWeights:
        c = self.config.mpcc
        return self.weights(c.default_q_cont, c.default_q_adv)

    def true_params(self, scenario) -> VehicleParams:
        if isinstance(scenario, VehicleParams):
            return scenario
        if isinstance(scenario, str):
            scenario = self.config.scenario(scenario)
        return scenario.true_params(self.nominal)


@dataclass
class LapResult:
    lap_time: float
    mean_deviation_cm: float
    boundary_violations: int
    completed: bool
    abort_reason: str
    telemetry: TelemetryLog
    solver_failures: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def max_speed(self) -> float:
        ts = self.telemetry.true_states
        return float(np.max(ts[:, 3])) if ts is not None and len(ts) else 0.0


def objective(lap: LapResult, lam: float = 0.05) -> float:
    """``T_lap + lam * mean |e_cont|`` with the deviation in centimetres."""
    return float(lap.lap_time + lam * lap.mean_deviation_cm)


class Session:
    """One simulated car driving consecutive laps.

    ``controller`` may be replaced by any object with the
    ``step_closed_loop(x, weights, residual)`` and ``reset()`` methods of
    :class:`MpccController`; tests use this to drive open-loop inputs.
    """

    def __init__(self, env: Environment, scenario, seed: int = 0, controller=None,
                 process_noise=None, measurement_noise=None):
        self.env = env
        self.true_params = env.true_params(scenario)
        self._p_true = self.true_params.to_vector()
        sim = env.config.simulation
        self.dt = sim.dt
        self.substeps = sim.substeps
        self.process_noise = np.asarray(
            sim.process_noise_std if process_noise is None else process_noise, dtype=float)
        self.measurement_noise = np.asarray(
            sim.measurement_noise_std if measurement_noise is None else measurement_noise,
            dtype=float)
        self.rng = np.random.default_rng(seed)
        self.controller = controller or MpccController(env.nominal, env.track, env.mpcc_config())
        ekf = env.config.ekf
        self._q_ekf = np.diag(np.square(ekf.process_std))
        self._r_ekf = np.diag(np.square(np.maximum(self.measurement_noise, 1e-6)))
        self.t = 0.0
        self.reset_to_start()

    def reset_to_start(self) -> None:
        tr = self.env.track
        self.x = np.array([tr.x[0], tr.y[0], tr.heading[0], 0.0, 0.0, 0.0])
        self.ekf = ekf_init(self.x, self.env.config.ekf.initial_std)
        self.controller.reset()
        self.s_true = 0.0
        self.progress = 0.0
        self.lap_start_time = self.t
        self.lap_start_progress = 0.0

    def measure(self) -> np.ndarray:
        return self.x[:3] + self.measurement_noise * self.rng.standard_normal(3)

    def drive_lap(self, weights: ControllerWeights, residual=None) -> LapResult:
        """Drive until the next start-line crossing or an abort."""
        env, obj = self.env, self.env.config.objective
        tr = env.track
        L = tr.total_length
        target = self.lap_start_progress + L
        rows, poses, inputs, ekfs, trues, devs = [], [], [], [], [], []
        violations = 0
        failures = consecutive = 0
        abort = ""
        lap_time = np.nan
        coef = np.zeros((2, 2)) if residual is None else np.asarray(residual.coefficients)
        p_nom = env.nominal.to_vector()
        while True:
            z = self.measure()
            self.ekf = ekf_update(self.ekf, z, self._r_ekf)
            x_est = self.ekf.mean.copy()
            u, diag = self.controller.step_closed_loop(x_est, weights, residual)
            u = np.asarray(u, dtype=float)
            status = int(diag.get("status", 0))
            if status != 0:
                failures += 1
                consecutive += 1
            else:
                consecutive = 0
            x_prev = self.x
            e_c = contouring_lag_errors(tr, x_prev[:2], self.s_true).e_cont
            pred = kd.model_step(x_prev, u, p_nom, self.dt, self.substeps, coef)
            self.x = kd.rk4_step(x_prev, u, self._p_true, self.dt, self.substeps)
            self.x[3:] += self.process_noise * self.rng.standard_normal(3)
            pred_err = self.x[4:6] - pred[4:6]
            self.ekf = ekf_predict(self.ekf, u, env.nominal, self._q_ekf, residual,
                                   self.dt, self.substeps)
            rows.append((self.t, *z, *x_prev[3:], *u, *x_est, self.progress,
                         e_c, status, *pred_err))
            poses.append(z)
            inputs.append(u)
            ekfs.append(x_est)
            trues.append(x_prev.copy())
            devs.append(abs(e_c))
            if boundary_margin(tr, x_prev[:2], self.s_true) < 0:
                violations += 1

            s_new = project(tr, self.x[:2], self.s_true)
            ds = (s_new - self.s_true + 0.5 * L) % L - 0.5 * L
            prev_progress = self.progress
            self.progress += ds
            self.s_true = s_new
            t_prev = self.t
            self.t += self.dt
            if self.progress >= target > prev_progress:
                frac = (target - prev_progress) / max(self.progress - prev_progress, 1e-12)
                t_cross = t_prev + frac * self.dt
                lap_time = t_cross - self.lap_start_time
                self.lap_start_time = t_cross
                self.lap_start_progress = target
                break
            if self.t - self.lap_start_time > obj.timeout:
                abort = "timeout"
            elif consecutive >= obj.max_failures:
                abort = "solver"
            elif abs(contouring_lag_errors(tr, self.x[:2], self.s_true).e_cont) > \
                    tr.half_width(self.s_true) + obj.offtrack:
                abort = "offtrack"
            elif not np.all(np.isfinite(self.x)):
                abort = "diverged"
            if abort:
                break

        log = TelemetryLog(np.array([r[0] for r in rows]), np.array(poses).reshape(-1, 3),
                           np.array(inputs).reshape(-1, 2), np.array(ekfs), np.array(trues))
        result = LapResult(lap_time=float(lap_time), mean_deviation_cm=100.0 * float(np.mean(devs)),
                           boundary_violations=violations, completed=not abort,
                           abort_reason=abort, telemetry=log, solver_failures=failures,
                           extra={"rows": rows})
        if abort:
            self.reset_to_start()
        return result


def run_lap(env: Environment, scenario, weights: ControllerWeights, residual=None,
            seed: int = 0, flying: bool = False, controller=None) -> LapResult:
    """Single lap from rest on the start line, or after one warm-up lap."""
    sess = Session(env, scenario, seed, controller=controller)
    if flying:
        first = sess.drive_lap(weights, residual)
        if not first.completed:
            return first
    return sess.drive_lap(weights, residual)


class LapEvaluator:
    """Tuning environment: one car, consecutive laps, objective per lap.

    ``evaluate`` drives a discarded transient lap followed by the measured
    lap with the same weights and residual model.
    """

    def __init__(self, env: Environment, scenario, seed: int = 0):
        self.env = env
        self.session = Session(env, scenario, seed)
        self.laps_driven = 0
        self._last_context = None

    def _lap(self, q_cont: float, q_adv: float, residual) -> LapResult:
        self.laps_driven += 1
        return self.session.drive_lap(self.env.weights(q_cont, q_adv), residual)

    def telemetry_lap(self, q_cont: float, q_adv: float) -> TelemetryLog:
        lap = self._lap(q_cont, q_adv, None)
        return lap.telemetry

    def evaluate(self, q_cont: float, q_adv: float, residual=None) -> dict:
        transient = self._lap(q_cont, q_adv, residual)
        lap = self._lap(q_cont, q_adv, residual)
        completed = transient.completed and lap.completed
        lam = self.env.config.objective.lambda_s_per_cm
        return {
            "J": objective(lap, lam) if lap.completed else np.nan,
            "completed": completed,
            "lap_time": lap.lap_time,
            "deviation_cm": lap.mean_deviation_cm,
            "violations": lap.boundary_violations,
            "telemetry": lap.telemetry,
            "lap": lap,
        }

    def context(self, telemetry: TelemetryLog):
        """Context and residual model from one lap; falls back to the last
        good fit when the lap is too short to learn from."""
        cfg = self.env.config
        rc = cfg.residual
        try:
            c, model = context_from_lap(telemetry, self.env.nominal, cfg.simulation.dt,
                                        cfg.simulation.substeps, rc.lambda_prior, rc.sg_window,
                                        rc.sg_order, rc.trim, rc.min_samples)
        except ValueError:
            if self._last_context is None:
                return np.zeros(4), None
            return self._last_context
        self._last_context = (c, model)
        return c, model


def write_telemetry(path, laps) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("lap",) + TELEMETRY_COLUMNS)
        for i, lap in enumerate(laps):
            for row in lap.extra["rows"]:
                w.writerow((i,) + tuple(_fmt(v) for v in row))


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def scenario_names(env: Environment) -> list[str]:
    return env.config.scenario_names


__all__ = [
    "Environment", "LapEvaluator", "LapResult", "Session", "objective", "run_lap", "write_telemetry",
    "TELEMETRY_COLUMNS", "ScenarioSpec", "scenario_names",
]
