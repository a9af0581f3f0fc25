"""Extended Kalman filter on the discrete nominal-plus-residual model.

Only the pose ``(px, py, psi)`` is measured.  The predict Jacobian is taken
by central finite differences of the discrete map; the update uses the
Joseph form so the covariance stays symmetric positive semi-definite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import dynamics as kd
from .vehicle import DEFAULT_DT, DEFAULT_SUBSTEPS, VehicleParams

H = np.hstack([np.eye(3), np.zeros((3, 3))])
FD_STEP = 1e-6


@dataclass(frozen=True)
class EkfState:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        if self.mean.shape[0] != self.cov.shape[0]:
            raise ValueError("mean and covariance dimensions differ")


def wrap_angle(a):
    """Map angles to ``(-pi, pi]``."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def _symmetrize(p: np.ndarray, jitter: float = 0.0) -> np.ndarray:
    p = 0.5 * (p + p.T)
    if jitter:
        p = p + jitter * np.eye(p.shape[0])
    return p


def ekf_init(x0, initial_std) -> EkfState:
    return EkfState(np.array(x0, dtype=float), np.diag(np.square(initial_std)))


def ekf_predict(ekf: EkfState, u, params: VehicleParams, process_cov, residual=None,
                dt: float = DEFAULT_DT, substeps: int = DEFAULT_SUBSTEPS,
                fd_step: float = FD_STEP) -> EkfState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    coef = np.zeros((2, 2)) if residual is None else np.ascontiguousarray(residual.coefficients)
    p = params.to_vector()
    u = np.ascontiguousarray(u, dtype=float)
    x = np.ascontiguousarray(ekf.mean, dtype=float)
    mean = kd.model_step(x, u, p, dt, substeps, coef)
    f = kd.model_step_fd_jacobian(x, u, p, dt, substeps, coef, fd_step)
    cov = _symmetrize(f @ ekf.cov @ f.T + process_cov)
    return EkfState(mean, cov)


def ekf_update(ekf: EkfState, z, meas_cov, h=None, angle_index=2) -> EkfState:
    """Kalman update with a linear measurement.

    By default ``h`` observes the pose and row ``angle_index`` of the
    innovation is wrapped; pass ``angle_index=None`` for plain outputs.
    """
    h = H if h is None else np.asarray(h, dtype=float)
    z = np.asarray(z, dtype=float)
    innov = z - h @ ekf.mean
    if angle_index is not None:
        innov[angle_index] = wrap_angle(innov[angle_index])
    s = h @ ekf.cov @ h.T + meas_cov
    k = np.linalg.solve(s, h @ ekf.cov).T
    mean = ekf.mean + k @ innov
    a = np.eye(len(mean)) - k @ h
    cov = _symmetrize(a @ ekf.cov @ a.T + k @ meas_cov @ k.T)
    return EkfState(mean, cov)


def linear_predict(ekf: EkfState, f: np.ndarray, q: np.ndarray, b=None, u=None) -> EkfState:
    """Predict step of a linear model, shared with the textbook filter tests."""
    mean = f @ ekf.mean
    if b is not None:
        mean = mean + b @ u
    return EkfState(mean, _symmetrize(f @ ekf.cov @ f.T + q))
