"""Residual dynamics learned by Bayesian linear regression.

The nominal discrete model ``f`` misses part of the lateral dynamics.  The
correction ``B C phi(x, u)`` acts on ``(vy, omega)`` only, with two tire
features obtained by differentiating the nominal model in the Pacejka
peak factors.  The posterior mean of ``C`` doubles as the context vector
handed to the contextual optimizer.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.signal import savgol_filter

from .kernels import dynamics as kd
from .vehicle import DEFAULT_DT, DEFAULT_SUBSTEPS, VehicleParams

OUTPUTS = ("vy", "omega")
STATE_ROWS = (4, 5)


@dataclass(frozen=True)
class TelemetryLog:
    """One lap of closed-loop data, one row per control step.

    ``poses`` are the measured ``(px, py, psi)``; ``inputs`` the applied
    ``(delta, tau)``.  ``ekf`` and ``true_states`` are kept for diagnostics
    and for the telemetry CSV but are not used by the learning pipeline.
    """

    t: np.ndarray
    poses: np.ndarray
    inputs: np.ndarray
    ekf: np.ndarray | None = None
    true_states: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.t)
        if self.poses.shape != (n, 3) or self.inputs.shape != (n, 2):
            raise ValueError("telemetry arrays are misaligned")
        if n > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("telemetry timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.t)


@dataclass(frozen=True)
class BlrPosterior:
    mean: np.ndarray
    cov: np.ndarray
    noise_var: float
    lambda_prior: float


@dataclass(frozen=True)
class ResidualModel:
    """Per-output BLR posteriors over the 2x2 coefficient matrix."""

    posteriors: tuple[BlrPosterior, BlrPosterior]

    @property
    def coefficients(self) -> np.ndarray:
        return np.vstack([p.mean for p in self.posteriors])

    @property
    def context(self) -> np.ndarray:
        return self.coefficients.reshape(-1)

    def predict(self, states, inputs, params: VehicleParams):
        """Mean and std of the residual on ``(vy, omega)`` for each row."""
        phi = feature_matrix(states, inputs, params)
        mean = phi @ self.coefficients.T
        std = np.column_stack([
            np.sqrt(np.einsum("ij,jk,ik->i", phi, p.cov, phi) + p.noise_var)
            for p in self.posteriors
        ])
        return mean, std

    @classmethod
    def zero(cls, lambda_prior: float = 1.0, noise_var: float = 1.0) -> "ResidualModel":
        p = BlrPosterior(np.zeros(2), np.eye(2) / lambda_prior, noise_var, lambda_prior)
        return cls((p, p))


def taylor_features(state, inp, params: VehicleParams) -> np.ndarray:
    """``(sin(C_f atan(B_f a_f)) cos(delta), sin(C_r atan(B_r a_r)))``."""
    return kd.taylor_features(np.ascontiguousarray(state, dtype=float),
                              np.ascontiguousarray(inp, dtype=float), params.to_vector())


def feature_matrix(states, inputs, params: VehicleParams) -> np.ndarray:
    states = np.asarray(states, dtype=float)
    inputs = np.asarray(inputs, dtype=float)
    p = params.to_vector()
    out = np.empty((len(states), 2))
    for k in range(len(states)):
        out[k] = kd.taylor_features(states[k], inputs[k], p)
    return out


def ground_truth_states(t, poses, window: int = 7, order: int = 2,
                        min_samples: int = 50) -> np.ndarray:
    """Non-causal velocity reconstruction from a pose log.

    World-frame velocities come from central differences and are smoothed by
    a zero-phase Savitzky-Golay filter.  The rotation into the body frame
    uses the heading smoothed by the same filter, since raw heading noise
    would otherwise leak ``vx * noise`` into ``vy``.  The returned states
    keep the measured pose in the first three columns.
    """
    t = np.asarray(t, dtype=float)
    poses = np.asarray(poses, dtype=float)
    n = len(t)
    if n < min_samples:
        raise ValueError(f"pose log too short ({n} < {min_samples} samples)")
    px, py = poses[:, 0], poses[:, 1]
    psi = np.unwrap(poses[:, 2])
    dx = np.gradient(px, t)
    dy = np.gradient(py, t)
    dpsi = np.gradient(psi, t)
    heading = psi
    if window > 1:
        dx = savgol_filter(dx, window, order, mode="interp")
        dy = savgol_filter(dy, window, order, mode="interp")
        dpsi = savgol_filter(dpsi, window, order, mode="interp")
        heading = savgol_filter(psi, window, order, mode="interp")
    c, s = np.cos(heading), np.sin(heading)
    out = np.empty((n, 6))
    out[:, 0] = px
    out[:, 1] = py
    out[:, 2] = psi
    out[:, 3] = c * dx + s * dy
    out[:, 4] = -s * dx + c * dy
    out[:, 5] = dpsi
    return out


def prediction_errors(states, inputs, params: VehicleParams, dt: float = DEFAULT_DT,
                      substeps: int = DEFAULT_SUBSTEPS):
    """One-step errors ``x_{k+1} - f(x_k, u_k)`` restricted to ``(vy, omega)``.

    Returns ``(x_k, u_k, e_k)`` for ``k = 0 .. n-2``.
    """
    states = np.asarray(states, dtype=float)
    inputs = np.asarray(inputs, dtype=float)
    p = params.to_vector()
    zero = np.zeros((2, 2))
    n = len(states) - 1
    err = np.empty((n, 2))
    for k in range(n):
        pred = kd.model_step(states[k], inputs[k], p, dt, substeps, zero)
        err[k] = states[k + 1, list(STATE_ROWS)] - pred[list(STATE_ROWS)]
    return states[:-1], inputs[:-1], err


def blr_fit(features, targets, lambda_prior: float, noise_var: float) -> BlrPosterior:
    """Conjugate Gaussian posterior with prior ``N(0, I / lambda_prior)``."""
    phi = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float).reshape(-1)
    if phi.shape[0] < 2:
        raise ValueError("need at least two samples")
    a = phi.T @ phi + noise_var * lambda_prior * np.eye(phi.shape[1])
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        warnings.warn("singular BLR normal matrix, adding jitter", RuntimeWarning)
        a = a + 1e-10 * np.eye(phi.shape[1])
        chol = np.linalg.cholesky(a)
    inv = np.linalg.solve(chol.T, np.linalg.solve(chol, np.eye(phi.shape[1])))
    mean = inv @ (phi.T @ y)
    cov = noise_var * inv
    return BlrPosterior(mean, 0.5 * (cov + cov.T), float(noise_var), float(lambda_prior))


def blr_fit_auto(features, targets, lambda_prior: float = 1.0,
                 floor: float = 1e-12) -> BlrPosterior:
    """BLR with the noise variance taken from a preliminary ridge fit."""
    y = np.asarray(targets, dtype=float).reshape(-1)
    noise = max(float(np.var(y)), floor)
    post = blr_fit(features, y, lambda_prior, noise)
    resid = y - np.asarray(features) @ post.mean
    noise = max(float(np.mean(resid ** 2)), floor)
    return blr_fit(features, y, lambda_prior, noise)


def learning_data(log: TelemetryLog, params: VehicleParams, dt: float = DEFAULT_DT,
                  substeps: int = DEFAULT_SUBSTEPS, window: int = 7, order: int = 2,
                  trim: int = 3, min_samples: int = 50):
    """Features and targets from one lap: ``(phi, errors, states, inputs)``."""
    gt = ground_truth_states(log.t, log.poses, window, order, min_samples)
    x, u, e = prediction_errors(gt, log.inputs, params, dt, substeps)
    if trim:
        x, u, e = x[trim:-trim], u[trim:-trim], e[trim:-trim]
    return feature_matrix(x, u, params), e, x, u


def fit_residual(features, errors, lambda_prior: float = 1.0) -> ResidualModel:
    errors = np.asarray(errors, dtype=float)
    return ResidualModel(tuple(blr_fit_auto(features, errors[:, j], lambda_prior)
                               for j in range(2)))


def context_from_lap(logs, params: VehicleParams, dt: float = DEFAULT_DT,
                     substeps: int = DEFAULT_SUBSTEPS, lambda_prior: float = 1.0,
                     window: int = 7, order: int = 2, trim: int = 3,
                     min_samples: int = 50):
    """Fit the residual model on one or more laps.

    Returns ``(context, model)`` where ``context`` is the concatenation
    ``[c_vy, c_omega]`` of posterior means.
    """
    if isinstance(logs, TelemetryLog):
        logs = [logs]
    phis, errs = [], []
    for log in logs:
        phi, e, _, _ = learning_data(log, params, dt, substeps, window, order, trim, min_samples)
        phis.append(phi)
        errs.append(e)
    model = fit_residual(np.vstack(phis), np.vstack(errs), lambda_prior)
    return model.context, model
