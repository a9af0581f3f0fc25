"""Dynamic bicycle model with simplified Pacejka lateral tire forces.

The same model serves as the simulated plant (perturbed parameters plus
process noise) and as the controller's nominal prediction model.

Sign convention: slip angles follow ``alpha_f = atan((vy + lf*omega)/vx) - delta``
and forces are ``D*sin(C*atan(B*alpha))``.  A lateral force that opposes
slip therefore needs ``B < 0``; the shipped parameter sets carry negative
``B`` coefficients for exactly this reason.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .kernels import dynamics as kd

DEFAULT_DT = 1.0 / 35.0
DEFAULT_SUBSTEPS = 2


@dataclass(frozen=True)
class VehicleState:
    px: float = 0.0
    py: float = 0.0
    psi: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    omega: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.px, self.py, self.psi, self.vx, self.vy, self.omega])

    @classmethod
    def from_array(cls, x) -> "VehicleState":
        x = np.asarray(x, dtype=float)
        return cls(*(float(v) for v in x[:6]))


@dataclass(frozen=True)
class VehicleInput:
    delta: float = 0.0
    tau: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.delta, self.tau])

    def clipped(self, delta_max: float = 0.40) -> "VehicleInput":
        return VehicleInput(
            float(np.clip(self.delta, -delta_max, delta_max)),
            float(np.clip(self.tau, -1.0, 1.0)),
        )


@dataclass(frozen=True)
class VehicleParams:
    """Physical parameters, SI units.

    ``v_blend`` is the lower bound on the longitudinal speed used in the
    slip-angle denominators.
    """

    m: float
    I_z: float
    l_f: float
    l_r: float
    B_f: float
    C_f: float
    D_f: float
    B_r: float
    C_r: float
    D_r: float
    C_m1: float
    C_m2: float
    C_r0: float
    C_r2: float
    v_blend: float = 0.5

    def __post_init__(self):
        for name in ("m", "I_z", "l_f", "l_r"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("D_f", "D_r"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for f in fields(self):
            if not np.isfinite(getattr(self, f.name)):
                raise ValueError(f"{f.name} must be finite")

    def to_vector(self) -> np.ndarray:
        v = np.empty(kd.N_PARAMS)
        v[kd.P_M] = self.m
        v[kd.P_IZ] = self.I_z
        v[kd.P_LF] = self.l_f
        v[kd.P_LR] = self.l_r
        v[kd.P_BF] = self.B_f
        v[kd.P_CF] = self.C_f
        v[kd.P_DF] = self.D_f
        v[kd.P_BR] = self.B_r
        v[kd.P_CR] = self.C_r
        v[kd.P_DR] = self.D_r
        v[kd.P_CM1] = self.C_m1
        v[kd.P_CM2] = self.C_m2
        v[kd.P_CR0] = self.C_r0
        v[kd.P_CR2] = self.C_r2
        v[kd.P_VBLEND] = self.v_blend
        return v

    def replace(self, **changes) -> "VehicleParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


def _arr(x) -> np.ndarray:
    if isinstance(x, (VehicleState, VehicleInput)):
        return x.as_array()
    return np.ascontiguousarray(x, dtype=float)


def slip_angles(state, delta: float, params: VehicleParams) -> tuple[float, float]:
    u = np.array([delta, 0.0])
    return kd.slip_angles(_arr(state), u, params.to_vector())


def tire_forces(state, inp, params: VehicleParams) -> tuple[float, float, float]:
    """Front/rear lateral forces and the longitudinal drive force ``(F_f, F_r, F_x)``."""
    return kd.tire_forces(_arr(state), _arr(inp), params.to_vector())


def continuous_dynamics(state, inp, params: VehicleParams) -> np.ndarray:
    """Time derivative of the six-dimensional state."""
    return kd.continuous_dynamics(_arr(state), _arr(inp), params.to_vector())


def integrate_step(state, inp, params: VehicleParams, dt: float = DEFAULT_DT,
                   substeps: int = 1) -> np.ndarray:
    """Classical RK4 with the input held over ``dt``.

    ``substeps`` splits ``dt`` into equal RK4 sub-intervals; the discrete
    model used by controller, filter and learning uses
    :data:`DEFAULT_SUBSTEPS` because the lateral dynamics are stiff at low
    speed.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    return kd.rk4_step(_arr(state), _arr(inp), params.to_vector(), float(dt), int(substeps))


def simulate_plant_step(state, inp, true_params: VehicleParams, noise_std,
                        rng: np.random.Generator, dt: float = DEFAULT_DT,
                        substeps: int = DEFAULT_SUBSTEPS) -> np.ndarray:
    """One plant step with additive Gaussian noise on ``(vx, vy, omega)``."""
    noise_std = np.asarray(noise_std, dtype=float)
    if noise_std.shape != (3,) or np.any(noise_std < 0):
        raise ValueError("noise_std must be three non-negative values")
    x = integrate_step(state, inp, true_params, dt, substeps)
    x[3:] += noise_std * rng.standard_normal(3)
    return x
