"""Gaussian-process surrogate over (weights, context) and the tuning loop.

The tuned weights live in a unit square obtained from a log10 box; the
context is standardized with the mean/std of the contexts seen so far.
The kernel is a product of squared-exponential kernels on the two parts,
so in standard mode (no context) it reduces to an ordinary SE-ARD kernel.
Acquisition is the lower confidence bound ``mu - beta * sigma``, minimized
over a grid and refined locally.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.stats import qmc

N_THETA = 2
N_CONTEXT = 4
MAX_JITTER = 1e-4


class GpError(RuntimeError):
    pass


@dataclass(frozen=True)
class Domain:
    """Box in log10 of ``(q_cont, q_adv)``."""

    log10_q_cont: tuple = (0.0, 2.5)
    log10_q_adv: tuple = (-2.0, 0.0)

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.log10_q_cont[0], self.log10_q_adv[0]])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.log10_q_cont[1], self.log10_q_adv[1]])

    def to_weights(self, u) -> tuple[float, float]:
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        lg = self.lower + u * (self.upper - self.lower)
        return float(10.0 ** lg[0]), float(10.0 ** lg[1])

    def to_unit(self, q_cont: float, q_adv: float) -> np.ndarray:
        lg = np.log10([q_cont, q_adv])
        return (lg - self.lower) / (self.upper - self.lower)


@dataclass(frozen=True)
class TuningRecord:
    q_cont: float
    q_adv: float
    context: np.ndarray
    J: float
    lap_time: float = np.nan
    deviation_cm: float = np.nan
    completed: bool = True
    mode: str = ""
    iteration: int = 0


@dataclass(frozen=True)
class Hyperparameters:
    """Log-space kernel hyperparameters (standardized target units)."""

    log_ls_theta: np.ndarray = field(default_factory=lambda: np.log(np.full(N_THETA, 0.3)))
    log_ls_context: np.ndarray = field(default_factory=lambda: np.log(np.full(N_CONTEXT, 1.0)))
    log_signal: float = 0.0
    log_noise: float = np.log(1e-2)

    def vector(self, contextual: bool) -> np.ndarray:
        parts = [self.log_ls_theta]
        if contextual:
            parts.append(self.log_ls_context)
        parts.append([self.log_signal, self.log_noise])
        return np.concatenate(parts)

    @classmethod
    def from_vector(cls, v, contextual: bool, template: "Hyperparameters") -> "Hyperparameters":
        v = np.asarray(v, dtype=float)
        ls_c = v[N_THETA:N_THETA + N_CONTEXT] if contextual else template.log_ls_context
        return cls(v[:N_THETA].copy(), np.array(ls_c, dtype=float), float(v[-2]), float(v[-1]))


def se_kernel(a, b, lengthscales) -> np.ndarray:
    a = np.atleast_2d(a) / lengthscales
    b = np.atleast_2d(b) / lengthscales
    d2 = np.sum(a * a, 1)[:, None] + np.sum(b * b, 1)[None, :] - 2.0 * a @ b.T
    return np.exp(-0.5 * np.maximum(d2, 0.0))


def kernel(theta_a, c_a, theta_b, c_b, hyp: Hyperparameters, contextual: bool = True) -> np.ndarray:
    """``sigma_f^2 * k_theta(theta, theta') * k_c(c, c')``."""
    k = np.exp(hyp.log_signal) * se_kernel(theta_a, theta_b, np.exp(hyp.log_ls_theta))
    if contextual:
        k = k * se_kernel(c_a, c_b, np.exp(hyp.log_ls_context))
    return k


@dataclass
class GpSurrogate:
    """Exact GP conditioned on ``(theta_unit, context) -> J``.

    With ``standardize`` the targets are centred and scaled by their sample
    mean/std and the contexts by theirs; the posterior is reported in the
    original units either way.
    """

    thetas: np.ndarray = field(default_factory=lambda: np.zeros((0, N_THETA)))
    contexts: np.ndarray = field(default_factory=lambda: np.zeros((0, N_CONTEXT)))
    y: np.ndarray = field(default_factory=lambda: np.zeros(0))
    hyp: Hyperparameters = field(default_factory=Hyperparameters)
    contextual: bool = True
    standardize: bool = True

    def __post_init__(self):
        self.thetas = np.asarray(self.thetas, dtype=float).reshape(-1, N_THETA)
        self.contexts = np.asarray(self.contexts, dtype=float).reshape(-1, N_CONTEXT)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if not (len(self.thetas) == len(self.contexts) == len(self.y)):
            raise ValueError("surrogate data are misaligned")
        self._prepare()

    @property
    def n(self) -> int:
        return len(self.y)

    def with_hyperparameters(self, hyp: Hyperparameters) -> "GpSurrogate":
        return GpSurrogate(self.thetas, self.contexts, self.y, hyp, self.contextual, self.standardize)

    def _prepare(self) -> None:
        n = self.n
        if self.standardize and n >= 2:
            self.y_mean = float(np.mean(self.y))
            self.y_std = float(np.std(self.y)) or 1.0
        elif self.standardize and n == 1:
            self.y_mean, self.y_std = float(self.y[0]), 1.0
        else:
            self.y_mean, self.y_std = 0.0, 1.0
        if self.standardize and n >= 1:
            self.c_mean = self.contexts.mean(0)
            std = self.contexts.std(0)
            self.c_std = np.where(std > 1e-12, std, 1.0)
        else:
            self.c_mean, self.c_std = np.zeros(N_CONTEXT), np.ones(N_CONTEXT)
        self._cz = (self.contexts - self.c_mean) / self.c_std
        self._yz = (self.y - self.y_mean) / self.y_std
        if n == 0:
            self._chol = np.zeros((0, 0))
            self._alpha = np.zeros(0)
            return
        k = self._gram() + np.exp(self.hyp.log_noise) * np.eye(n)
        jitter = 0.0
        while True:
            try:
                self._chol = np.linalg.cholesky(k + jitter * np.eye(n))
                break
            except np.linalg.LinAlgError:
                jitter = 1e-10 if jitter == 0.0 else 10.0 * jitter
                if jitter > MAX_JITTER:
                    raise GpError("kernel matrix is not positive definite") from None
        self._alpha = cho_solve((self._chol, True), self._yz, check_finite=False)

    def _gram(self) -> np.ndarray:
        return kernel(self.thetas, self._cz, self.thetas, self._cz, self.hyp, self.contextual)

    def scale_context(self, c) -> np.ndarray:
        return (np.atleast_2d(np.asarray(c, dtype=float)) - self.c_mean) / self.c_std

    def posterior(self, theta, context=None) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance at unit-square ``theta`` rows."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        if context is None:
            context = np.zeros(N_CONTEXT) if self.n == 0 else self.c_mean
        cz = self.scale_context(context)
        if len(cz) == 1:
            cz = np.repeat(cz, len(theta), 0)
        prior = np.exp(self.hyp.log_signal)
        if self.n == 0:
            return np.full(len(theta), self.y_mean), np.full(len(theta), prior * self.y_std ** 2)
        ks = kernel(theta, cz, self.thetas, self._cz, self.hyp, self.contextual)
        mu = ks @ self._alpha
        v = solve_triangular(self._chol, ks.T, lower=True, check_finite=False)
        var = np.maximum(prior - np.sum(v * v, 0), 0.0)
        return self.y_mean + self.y_std * mu, var * self.y_std ** 2

    def log_marginal_likelihood(self) -> float:
        """In standardized target units."""
        if self.n == 0:
            return 0.0
        return float(-0.5 * self._yz @ self._alpha - np.sum(np.log(np.diag(self._chol)))
                     - 0.5 * self.n * np.log(2.0 * np.pi))


def gp_posterior(surrogate: GpSurrogate, theta, context=None):
    return surrogate.posterior(theta, context)


def lcb(surrogate: GpSurrogate, theta, context, beta: float) -> np.ndarray:
    """Lower confidence bound ``mu - beta * sigma`` (to be minimized)."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    mu, var = surrogate.posterior(theta, context)
    return mu - beta * np.sqrt(var)


ucb = lcb


def unit_grid(resolution: int) -> np.ndarray:
    g = np.linspace(0.0, 1.0, resolution)
    a, b = np.meshgrid(g, g, indexing="ij")
    return np.column_stack([a.ravel(), b.ravel()])


def suggest(surrogate: GpSurrogate, context, beta: float = 2.0, resolution: int = 61,
            refine: bool = True) -> np.ndarray:
    """Minimize the LCB over the unit square for a fixed context.

    Grid argmin (first index on ties) followed by a bounded quasi-Newton
    refinement that is kept only if it improves the acquisition.
    """
    if surrogate.n == 0:
        return np.full(N_THETA, 0.5)
    grid = unit_grid(resolution)
    acq = lcb(surrogate, grid, context, beta)
    best = grid[int(np.argmin(acq))]
    best_val = float(np.min(acq))
    if refine:
        res = minimize(lambda t: float(lcb(surrogate, t[None, :], context, beta)[0]), best,
                       method="L-BFGS-B", bounds=[(0.0, 1.0)] * N_THETA,
                       options={"maxiter": 50})
        if res.fun < best_val - 1e-12:
            best = np.clip(res.x, 0.0, 1.0)
    return np.asarray(best, dtype=float)


@dataclass(frozen=True)
class HyperBounds:
    log_lengthscale: tuple = (-2.5, 1.5)
    log_signal: tuple = (-4.0, 4.0)
    log_noise: tuple = (-13.8, 0.0)

    def arrays(self, contextual: bool):
        n_ls = N_THETA + (N_CONTEXT if contextual else 0)
        lo = [self.log_lengthscale[0]] * n_ls + [self.log_signal[0], self.log_noise[0]]
        hi = [self.log_lengthscale[1]] * n_ls + [self.log_signal[1], self.log_noise[1]]
        return np.array(lo), np.array(hi)


def fit_hyperparameters(surrogate: GpSurrogate, bounds: HyperBounds = HyperBounds(),
                        restarts: int = 4, sweeps: int = 6, seed: int = 0,
                        initial_step: float = 1.0, min_step: float = 0.05) -> GpSurrogate:
    """Maximize the log marginal likelihood by multi-start coordinate search.

    The current hyperparameters are always one of the starts, so the
    returned likelihood is never below the starting one.
    """
    if surrogate.n < 5:
        return surrogate
    ctx = surrogate.contextual
    lo, hi = bounds.arrays(ctx)
    template = surrogate.hyp

    def lml(v) -> float:
        try:
            s = surrogate.with_hyperparameters(Hyperparameters.from_vector(v, ctx, template))
            return s.log_marginal_likelihood()
        except GpError:
            return -np.inf

    rng = np.random.default_rng(seed)
    starts = [np.clip(template.vector(ctx), lo, hi)]
    for _ in range(restarts):
        starts.append(lo + rng.random(len(lo)) * (hi - lo))
    best_v, best_f = None, -np.inf
    for v in starts:
        v = v.copy()
        f = lml(v)
        step = initial_step
        passes = 0
        while step >= min_step and passes < 8 * sweeps:
            improved = False
            for j in range(len(v)):
                for sgn in (1.0, -1.0):
                    cand = v.copy()
                    cand[j] = np.clip(cand[j] + sgn * step, lo[j], hi[j])
                    fc = lml(cand)
                    if fc > f + 1e-12:
                        v, f, improved = cand, fc, True
                        break
            passes += 1
            if not improved:
                step *= 0.5
        if f > best_f:
            best_v, best_f = v, f
    if best_v is None or not np.isfinite(best_f):
        warnings.warn("hyperparameter search failed, keeping previous values", RuntimeWarning)
        return surrogate
    return surrogate.with_hyperparameters(Hyperparameters.from_vector(best_v, ctx, template))


def sobol_points(n: int, seed: int, dim: int = N_THETA) -> np.ndarray:
    """Scrambled Sobol points in the unit cube."""
    if n <= 0:
        return np.zeros((0, dim))
    sampler = qmc.Sobol(d=dim, scramble=True, seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return sampler.random(n)


class Evaluator(Protocol):
    def evaluate(self, q_cont: float, q_adv: float, residual) -> dict: ...

    def telemetry_lap(self, q_cont: float, q_adv: float): ...

    def context(self, telemetry) -> tuple[np.ndarray, object]: ...


@dataclass(frozen=True)
class TuningSettings:
    beta: float = 2.0
    grid: int = 61
    n_sobol: int = 8
    crash_factor: float = 2.0
    fallback_penalty: float = 20.0
    fit_restarts: int = 4
    fit_sweeps: int = 6
    bounds: HyperBounds = HyperBounds()
    domain: Domain = Domain()


def build_surrogate(records: Sequence[TuningRecord], domain: Domain, contextual: bool,
                    hyp: Optional[Hyperparameters] = None) -> GpSurrogate:
    th = np.array([domain.to_unit(r.q_cont, r.q_adv) for r in records]).reshape(-1, N_THETA)
    cs = np.array([r.context for r in records]).reshape(-1, N_CONTEXT)
    ys = np.array([r.J for r in records])
    return GpSurrogate(th, cs, ys, hyp or Hyperparameters(), contextual)


def _penalty(records, settings: TuningSettings) -> float:
    done = [r.J for r in records if r.completed and np.isfinite(r.J)]
    if not done:
        return settings.fallback_penalty
    return settings.crash_factor * max(done)


def run_tuning(evaluator: Evaluator, mode: str, n_iter: int, seed: int = 0,
               pretrain: Sequence[TuningRecord] = (), settings: TuningSettings = TuningSettings(),
               log=None) -> list[TuningRecord]:
    """Contextual (or standard) Bayesian optimization of the controller weights.

    Each iteration: extract the context from the previous lap, suggest
    weights for that context, update the residual model, drive one discarded
    transient lap and one measured lap, then append the record.  Standard
    mode skips the context and residual steps and ignores the context in
    the kernel.  Sobol points replace the first suggestions unless
    contextual pretraining data are supplied.
    """
    if mode not in ("standard", "contextual"):
        raise ValueError(f"unknown mode {mode!r}")
    contextual = mode == "contextual"
    history = list(pretrain)
    if n_iter <= 0:
        return history
    dom = settings.domain
    n_init = 0 if (contextual and pretrain) else settings.n_sobol
    init = sobol_points(n_init, seed)
    hyp = Hyperparameters()
    telemetry = None
    if contextual:
        q0 = dom.to_weights(np.full(N_THETA, 0.5))
        telemetry = evaluator.telemetry_lap(*q0)
    for it in range(n_iter):
        context = np.zeros(N_CONTEXT)
        residual = None
        if contextual:
            context, residual = evaluator.context(telemetry)
        if it < len(init):
            u = init[it]
        else:
            sur = build_surrogate(history, dom, contextual, hyp)
            sur = fit_hyperparameters(sur, settings.bounds, settings.fit_restarts,
                                      settings.fit_sweeps, seed=seed + 1000 * it)
            hyp = sur.hyp
            u = suggest(sur, context, settings.beta, settings.grid)
        q_cont, q_adv = dom.to_weights(u)
        out = evaluator.evaluate(q_cont, q_adv, residual)
        completed = bool(out.get("completed", True))
        J = float(out["J"]) if completed else _penalty(history, settings)
        rec = TuningRecord(q_cont, q_adv, np.asarray(context, dtype=float), J,
                           float(out.get("lap_time", np.nan)),
                           float(out.get("deviation_cm", np.nan)), completed, mode, it)
        history.append(rec)
        if contextual and out.get("telemetry") is not None:
            telemetry = out["telemetry"]
        if log is not None:
            log(rec)
    return history


def best_so_far(records: Sequence[TuningRecord]) -> np.ndarray:
    return np.minimum.accumulate([r.J for r in records]) if records else np.zeros(0)


__all__ = [
    "Domain", "TuningRecord", "Hyperparameters", "HyperBounds", "GpSurrogate", "GpError",
    "kernel", "se_kernel", "gp_posterior", "lcb", "ucb", "suggest", "fit_hyperparameters",
    "sobol_points", "run_tuning", "TuningSettings", "best_so_far", "build_surrogate",
]
