"""Experiment configuration loaded from an INI file.

Every section of the file maps onto one dataclass below; keys not present
fall back to the dataclass default.  Tuples are written as whitespace or
comma separated numbers.  All units are SI unless the key name says
otherwise (``lambda_s_per_cm``).
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import MISSING, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Optional

from .vehicle import VehicleParams

DEFAULT_CONFIG_NAME = "default.ini"
DEMO_TRACK_NAME = "demo_track.csv"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimulationConfig:
    dt: float = 1.0 / 35.0
    substeps: int = 2
    process_noise_std: tuple = (1e-3, 1e-3, 1e-2)
    measurement_noise_std: tuple = (1e-3, 1e-3, 1e-2)


@dataclass(frozen=True)
class TrackConfig:
    path: str = ""
    ds: float = 0.02


@dataclass(frozen=True)
class ControllerConfig:
    horizon: int = 20
    delta_max: float = 0.40
    gamma_max: float = 5.0
    q_lag: float = 1000.0
    r_input: tuple = (0.0, 0.0, 0.0)
    r_rate: tuple = (10.0, 0.1, 0.01)
    prox: tuple = (1.0, 0.1, 0.1)
    car_margin: float = 0.03
    slack_l1_factor: float = 1e3
    slack_l2: float = 100.0
    sqp_iterations: int = 1
    cold_start_iterations: int = 8
    default_q_cont: float = 10.0
    default_q_adv: float = 0.3


@dataclass(frozen=True)
class EkfConfig:
    process_std: tuple = (1e-3, 1e-3, 1e-3, 2e-2, 2e-2, 1e-1)
    initial_std: tuple = (1e-2, 1e-2, 1e-2, 1e-1, 1e-1, 1e-1)


@dataclass(frozen=True)
class ResidualConfig:
    lambda_prior: float = 1.0
    sg_window: int = 7
    sg_order: int = 2
    trim: int = 3
    min_samples: int = 50


@dataclass(frozen=True)
class BayesoptConfig:
    beta: float = 2.0
    grid: int = 61
    n_sobol: int = 8
    log10_q_cont: tuple = (0.0, 2.5)
    log10_q_adv: tuple = (-2.0, 0.0)
    fit_restarts: int = 4
    fit_sweeps: int = 6
    log_lengthscale_bounds: tuple = (-2.5, 1.5)
    log_signal_bounds: tuple = (-4.0, 4.0)
    log_noise_bounds: tuple = (-13.8, 0.0)


@dataclass(frozen=True)
class ObjectiveConfig:
    lambda_s_per_cm: float = 0.05
    timeout: float = 60.0
    max_failures: int = 10
    offtrack: float = 0.2
    crash_factor: float = 2.0
    fallback_penalty: float = 20.0


@dataclass(frozen=True)
class ScenarioSpec:
    """Multiplicative perturbation of the nominal car.

    ``l_f_shift`` moves the centre of gravity forward by that fraction of
    ``l_f`` while keeping the wheelbase.
    """

    name: str
    description: str = ""
    m_scale: float = 1.0
    I_z_scale: float = 1.0
    l_f_shift: float = 0.0
    D_scale: float = 1.0

    def true_params(self, nominal: VehicleParams) -> VehicleParams:
        wheelbase = nominal.l_f + nominal.l_r
        l_f = nominal.l_f * (1.0 + self.l_f_shift)
        return nominal.replace(
            m=nominal.m * self.m_scale,
            I_z=nominal.I_z * self.I_z_scale,
            l_f=l_f,
            l_r=wheelbase - l_f,
            D_f=nominal.D_f * self.D_scale,
            D_r=nominal.D_r * self.D_scale,
        )


@dataclass(frozen=True)
class ExperimentConfig:
    detuned_q_cont: float = 10.0
    detuned_q_adv: float = 0.03
    tuned_q_cont: float = 10.0
    tuned_q_adv: float = 0.3
    learning_laps: int = 2
    table_laps: int = 8
    table_resamples: int = 50
    gp_max_points: int = 400
    fig4_laps: int = 20
    fig6_laps: int = 20
    fig5_sobol: int = 30
    fig5_ucb: int = 10
    fig7_iters: int = 15
    fig7_seeds: int = 3


@dataclass(frozen=True)
class Config:
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    vehicle: Optional[VehicleParams] = None
    track: TrackConfig = field(default_factory=TrackConfig)
    mpcc: ControllerConfig = field(default_factory=ControllerConfig)
    ekf: EkfConfig = field(default_factory=EkfConfig)
    residual: ResidualConfig = field(default_factory=ResidualConfig)
    bayesopt: BayesoptConfig = field(default_factory=BayesoptConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    experiments: ExperimentConfig = field(default_factory=ExperimentConfig)
    scenarios: tuple = ()
    source: str = ""
    digest: str = ""

    def scenario(self, name: str) -> ScenarioSpec:
        for sc in self.scenarios:
            if sc.name == name:
                return sc
        known = ", ".join(sc.name for sc in self.scenarios)
        raise ConfigError(f"unknown scenario {name!r} (known: {known})")

    @property
    def scenario_names(self) -> list[str]:
        return [sc.name for sc in self.scenarios]

    def track_path(self) -> Path:
        if self.track.path:
            p = Path(self.track.path)
            if not p.is_absolute() and self.source:
                p = Path(self.source).parent / p
            return p
        return data_path(DEMO_TRACK_NAME)


def data_path(name: str) -> Path:
    return Path(str(resources.files("racetune") / "data" / name))


def _convert(raw: str, default, key: str):
    try:
        if isinstance(default, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(v) for v in raw.replace(",", " ").split())
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


def _section(parser, section: str, cls, required: bool = False, **extra):
    if not parser.has_section(section):
        if required:
            raise ConfigError(f"missing section [{section}]")
        return cls(**extra)
    known = {f.name.lower(): f for f in fields(cls)}
    kwargs = dict(extra)
    for key, raw in parser.items(section):
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        f = known[key]
        default = "" if f.default is MISSING else f.default
        kwargs[f.name] = _convert(raw, default, f"{section}.{key}")
    return cls(**kwargs)


def _vehicle(parser) -> VehicleParams:
    if not parser.has_section("vehicle"):
        raise ConfigError("missing section [vehicle]")
    kwargs = {}
    names = {f.name for f in fields(VehicleParams)}
    lowered = {n.lower(): n for n in names}
    for key, raw in parser.items("vehicle"):
        name = lowered.get(key)
        if name is None:
            raise ConfigError(f"unknown key {key!r} in [vehicle]")
        kwargs[name] = _convert(raw, 0.0, f"vehicle.{key}")
    missing = {n for n in names if n != "v_blend"} - set(kwargs)
    if missing:
        raise ConfigError(f"[vehicle] is missing {sorted(missing)}")
    return VehicleParams(**kwargs)


def parse_config(text: str, source: str = "") -> Config:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str.lower
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    scenarios = []
    for sec in parser.sections():
        if sec.startswith("scenario."):
            scenarios.append(_section(parser, sec, ScenarioSpec, name=sec.split(".", 1)[1]))
    known = {"simulation", "vehicle", "track", "mpcc", "ekf", "residual", "bayesopt",
             "objective", "experiments"}
    for sec in parser.sections():
        if sec not in known and not sec.startswith("scenario."):
            raise ConfigError(f"unknown section [{sec}]")
    return Config(
        simulation=_section(parser, "simulation", SimulationConfig),
        vehicle=_vehicle(parser),
        track=_section(parser, "track", TrackConfig),
        mpcc=_section(parser, "mpcc", ControllerConfig),
        ekf=_section(parser, "ekf", EkfConfig),
        residual=_section(parser, "residual", ResidualConfig),
        bayesopt=_section(parser, "bayesopt", BayesoptConfig),
        objective=_section(parser, "objective", ObjectiveConfig),
        experiments=_section(parser, "experiments", ExperimentConfig),
        scenarios=tuple(scenarios),
        source=source,
        digest=hashlib.sha256(text.encode()).hexdigest(),
    )


def load_config(path=None) -> Config:
    """Read a config file; ``None`` loads the shipped defaults."""
    p = Path(path) if path is not None else data_path(DEFAULT_CONFIG_NAME)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return parse_config(text, str(p))
