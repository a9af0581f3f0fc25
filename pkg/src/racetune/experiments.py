"""The desk-scale experiments and their CSV outputs.

Each function returns plain Python/numpy results and, when ``out`` is
given, writes CSV files into that directory.  All randomness flows from
the ``seed`` argument so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .bayesopt import (Domain, TuningRecord, TuningSettings, HyperBounds, best_so_far,
                       build_surrogate, fit_hyperparameters, run_tuning, unit_grid)
from .harness import Environment, LapEvaluator, LapResult, Session, objective
from .residual import context_from_lap, fit_residual, learning_data


def _write_csv(path, header, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def _cell(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    return f"{float(v):.10g}"


# ---------------------------------------------------------------- Table I

def collect_laps(env: Environment, scenario: str, weights, n_laps: int, seed: int,
                 residual=None, warmup: int = 1) -> list[LapResult]:
    """Drive ``warmup + n_laps`` flying laps and keep the last ``n_laps`` completed."""
    sess = Session(env, scenario, seed)
    laps: list[LapResult] = []
    tries = 0
    while len(laps) < n_laps and tries < 3 * (n_laps + warmup):
        lap = sess.drive_lap(weights, residual)
        tries += 1
        if tries <= warmup or not lap.completed:
            continue
        laps.append(lap)
    if len(laps) < n_laps:
        raise RuntimeError(f"only {len(laps)} of {n_laps} laps completed")
    return laps


def _gp_baseline(x_train, e_train, x_test, max_points: int, rng):
    """Exact GP per output on ``(vx, vy, omega, delta, tau)``."""
    from sklearn.gaussian_process import GaussianProcessRegressor
    from sklearn.gaussian_process.kernels import RBF, ConstantKernel, WhiteKernel

    idx = np.arange(len(x_train))
    if len(idx) > max_points:
        idx = np.sort(rng.choice(idx, max_points, replace=False))
    xs, es = x_train[idx], e_train[idx]
    mu, sd = xs.mean(0), xs.std(0) + 1e-9
    pred = np.empty((len(x_test), e_train.shape[1]))
    for j in range(e_train.shape[1]):
        kern = ConstantKernel(1.0, (1e-3, 1e3)) * RBF(np.ones(xs.shape[1]), (1e-2, 1e2)) \
            + WhiteKernel(0.1, (1e-6, 1e1))
        gp = GaussianProcessRegressor(kern, normalize_y=True, random_state=0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            gp.fit((xs - mu) / sd, es[:, j])
        pred[:, j] = gp.predict((x_test - mu) / sd)
    return pred


@dataclass
class ModelLearningResult:
    rmse: dict            # method -> (n_resamples, 2) array, columns vy [cm/s], omega [rad/s]

    def summary(self) -> dict:
        return {k: (v.mean(0), v.std(0)) for k, v in self.rmse.items()}

    def ratio(self, method: str = "blr") -> np.ndarray:
        return self.rmse[method].mean(0) / self.rmse["nominal"].mean(0)


def experiment_model_learning(env: Environment, scenario: str = "car2", seed: int = 0,
                              n_laps: Optional[int] = None, resamples: Optional[int] = None,
                              with_gp: bool = True, out=None) -> ModelLearningResult:
    """Nominal vs GP vs BLR one-step prediction error on held-out laps."""
    ex = env.config.experiments
    rc = env.config.residual
    n_laps = n_laps or ex.table_laps
    resamples = resamples or ex.table_resamples
    laps = collect_laps(env, scenario, env.default_weights(), n_laps, seed)
    data = [learning_data(lap.telemetry, env.nominal, env.config.simulation.dt,
                          env.config.simulation.substeps, rc.sg_window, rc.sg_order, rc.trim,
                          rc.min_samples) for lap in laps]
    rng = np.random.default_rng(seed + 7919)
    rows = {"nominal": [], "blr": []}
    if with_gp:
        rows["gp"] = []
    scale = np.array([100.0, 1.0])
    for _ in range(resamples):
        pick = rng.choice(len(laps), 3, replace=False)
        train, test = pick[:2], pick[2]
        phi_tr = np.vstack([data[i][0] for i in train])
        e_tr = np.vstack([data[i][1] for i in train])
        phi_te, e_te = data[test][0], data[test][1]
        model = fit_residual(phi_tr, e_tr, rc.lambda_prior)
        rows["nominal"].append(np.sqrt(np.mean(e_te ** 2, 0)) * scale)
        rows["blr"].append(np.sqrt(np.mean((e_te - phi_te @ model.coefficients.T) ** 2, 0)) * scale)
        if with_gp:
            def feats(i):
                return np.column_stack([data[i][2][:, 3:6], data[i][3]])
            x_tr = np.vstack([feats(i) for i in train])
            pred = _gp_baseline(x_tr, e_tr, feats(test), ex.gp_max_points, rng)
            rows["gp"].append(np.sqrt(np.mean((e_te - pred) ** 2, 0)) * scale)
    res = ModelLearningResult({k: np.array(v) for k, v in rows.items()})
    if out is not None:
        out = Path(out)
        summ = res.summary()
        _write_csv(out / "table1.csv",
                   ["method", "vy_rmse_mean_cm_s", "vy_rmse_std_cm_s",
                    "omega_rmse_mean_rad_s", "omega_rmse_std_rad_s"],
                   [[k, m[0], s[0], m[1], s[1]] for k, (m, s) in summ.items()])
        _write_csv(out / "table1_resamples.csv",
                   ["resample"] + [f"{k}_{o}" for k in res.rmse for o in ("vy", "omega")],
                   [[i] + [res.rmse[k][i, j] for k in res.rmse for j in range(2)]
                    for i in range(resamples)])
    return res


# ------------------------------------------------------------ three settings

SETTINGS = ("nominal_detuned", "learned_detuned", "learned_tuned")


@dataclass
class ThreeSettingsResult:
    laps: dict                  # setting -> list[LapResult]
    context: np.ndarray

    def mean_lap_time(self, setting: str) -> float:
        return float(np.mean([l.lap_time for l in self.laps[setting] if l.completed]))

    def mean_deviation(self, setting: str) -> float:
        return float(np.mean([l.mean_deviation_cm for l in self.laps[setting] if l.completed]))

    def completed(self, setting: str) -> int:
        return sum(l.completed for l in self.laps[setting])


def _residual_config(env: Environment) -> dict:
    rc = env.config.residual
    sim = env.config.simulation
    return dict(dt=sim.dt, substeps=sim.substeps, lambda_prior=rc.lambda_prior,
                window=rc.sg_window, order=rc.sg_order, trim=rc.trim,
                min_samples=rc.min_samples)


def learn_residual(env: Environment, scenario: str, weights, seed: int, n_laps: int):
    """Fit the residual model on laps driven with the nominal model only."""
    laps = collect_laps(env, scenario, weights, n_laps, seed)
    return context_from_lap([l.telemetry for l in laps], env.nominal, **_residual_config(env))


def experiment_three_settings(env: Environment, scenario: str = "car2", seed: int = 0,
                              n_laps: Optional[int] = None, out=None) -> ThreeSettingsResult:
    """Nominal/detuned vs learned/detuned vs learned/tuned, flying laps each."""
    ex = env.config.experiments
    n_laps = n_laps or ex.fig4_laps
    detuned = env.weights(ex.detuned_q_cont, ex.detuned_q_adv)
    tuned = env.weights(ex.tuned_q_cont, ex.tuned_q_adv)
    context, model = learn_residual(env, scenario, detuned, seed, ex.learning_laps)
    plan = {
        "nominal_detuned": (detuned, None),
        "learned_detuned": (detuned, model),
        "learned_tuned": (tuned, model),
    }
    laps = {}
    for i, (name, (w, res)) in enumerate(plan.items()):
        sess = Session(env, scenario, seed + 101 + i)
        sess.drive_lap(w, res)  # warm-up lap
        laps[name] = [sess.drive_lap(w, res) for _ in range(n_laps)]
    result = ThreeSettingsResult(laps, context)
    if out is not None:
        out = Path(out)
        _write_csv(out / "fig4_laps.csv",
                   ["setting", "lap", "lap_time", "mean_deviation_cm", "boundary_violations",
                    "completed"],
                   [[k, i, l.lap_time, l.mean_deviation_cm, l.boundary_violations, l.completed]
                    for k, ls in laps.items() for i, l in enumerate(ls)])
        _write_csv(out / "fig4_positions.csv", ["setting", "lap", "px", "py"],
                   [[k, i, x[0], x[1]] for k, ls in laps.items() for i, l in enumerate(ls)
                    for x in l.telemetry.true_states])
        _write_csv(out / "fig4_summary.csv",
                   ["setting", "mean_lap_time", "mean_deviation_cm", "completed_laps"],
                   [[k, result.mean_lap_time(k), result.mean_deviation(k), result.completed(k)]
                    for k in laps])
    return result


# ------------------------------------------------------- context clusters

@dataclass
class ContextClusters:
    contexts: dict              # scenario -> (n_laps, 4)

    def centroids(self) -> dict:
        return {k: v.mean(0) for k, v in self.contexts.items()}

    def spreads(self) -> dict:
        """Root of the trace of each cluster's covariance."""
        return {k: float(np.sqrt(np.trace(np.cov(v.T)))) for k, v in self.contexts.items()}

    def min_centroid_distance(self) -> float:
        cs = list(self.centroids().values())
        return float(min(np.linalg.norm(a - b) for i, a in enumerate(cs) for b in cs[i + 1:]))

    def separation_ratio(self) -> float:
        return self.min_centroid_distance() / max(self.spreads().values())


def experiment_context_clusters(env: Environment, scenarios: Optional[Sequence[str]] = None,
                                seed: int = 0, n_laps: Optional[int] = None,
                                out=None) -> ContextClusters:
    """Per-lap BLR contexts for every scenario under the default weights.

    As during tuning, the residual fitted on one lap drives the next, so the
    context is read in the closed-loop regime it is used in.  Incomplete laps
    are skipped and leave the model unchanged.
    """
    scenarios = list(scenarios or env.config.scenario_names)
    n_laps = n_laps or env.config.experiments.fig6_laps
    w = env.default_weights()
    rc = _residual_config(env)
    contexts = {}
    for i, sc in enumerate(scenarios):
        sess = Session(env, sc, seed + 31 * i)
        sess.drive_lap(w)
        model, cs, tries = None, [], 0
        while len(cs) < n_laps and tries < 3 * n_laps:
            lap = sess.drive_lap(w, model)
            tries += 1
            if not lap.completed:
                continue
            c, model = context_from_lap(lap.telemetry, env.nominal, **rc)
            cs.append(c)
        if len(cs) < n_laps:
            raise RuntimeError(f"only {len(cs)} of {n_laps} laps completed on {sc}")
        contexts[sc] = np.array(cs)
    res = ContextClusters(contexts)
    if out is not None:
        _write_csv(Path(out) / "fig6_contexts.csv", ["scenario", "lap", "c1", "c2", "c3", "c4"],
                   [[k, i, *c] for k, v in contexts.items() for i, c in enumerate(v)])
    return res


# ------------------------------------------------------- tuning experiments

def tuning_settings(env: Environment, n_sobol: Optional[int] = None) -> TuningSettings:
    bo = env.config.bayesopt
    obj = env.config.objective
    return TuningSettings(
        beta=bo.beta, grid=bo.grid, n_sobol=bo.n_sobol if n_sobol is None else n_sobol,
        crash_factor=obj.crash_factor, fallback_penalty=obj.fallback_penalty,
        fit_restarts=bo.fit_restarts, fit_sweeps=bo.fit_sweeps,
        bounds=HyperBounds(bo.log_lengthscale_bounds, bo.log_signal_bounds,
                           bo.log_noise_bounds),
        domain=Domain(bo.log10_q_cont, bo.log10_q_adv))


HISTORY_COLUMNS = ["iter", "mode", "seed", "q_cont", "q_adv", "c1", "c2", "c3", "c4", "J",
                   "laptime", "centerline_dev"]


def history_rows(records: Sequence[TuningRecord], seed: int, extra=()) -> list:
    return [[r.iteration, r.mode, seed, r.q_cont, r.q_adv, *r.context, r.J, r.lap_time,
             r.deviation_cm, *extra] for r in records]


def tune(env: Environment, scenario: str, mode: str, n_iter: int, seed: int,
         pretrain: Sequence[TuningRecord] = (), n_sobol: Optional[int] = None):
    """One BO run on a fresh car; returns only the new records."""
    ev = LapEvaluator(env, scenario, seed)
    hist = run_tuning(ev, mode, n_iter, seed, pretrain, tuning_settings(env, n_sobol))
    return hist[len(pretrain):]


@dataclass
class ResponseSurface:
    records: list
    grid: np.ndarray            # (g*g, 2) unit coordinates
    mean: np.ndarray
    argmin_weights: tuple


def experiment_response_surface(env: Environment, scenario: str = "car1", seed: int = 0,
                                n_sobol: Optional[int] = None, n_ucb: Optional[int] = None,
                                out=None) -> ResponseSurface:
    """Sobol scan plus a few LCB steps, then the GP posterior mean over the box."""
    ex = env.config.experiments
    n_sobol = ex.fig5_sobol if n_sobol is None else n_sobol
    n_ucb = ex.fig5_ucb if n_ucb is None else n_ucb
    records = tune(env, scenario, "standard", n_sobol + n_ucb, seed, n_sobol=n_sobol)
    st = tuning_settings(env)
    sur = fit_hyperparameters(build_surrogate(records, st.domain, False), st.bounds,
                              st.fit_restarts, st.fit_sweeps, seed)
    grid = unit_grid(st.grid)
    mean, _ = sur.posterior(grid)
    best = st.domain.to_weights(grid[int(np.argmin(mean))])
    res = ResponseSurface(records, grid, mean, best)
    if out is not None:
        out = Path(out)
        _write_csv(out / f"fig5_{scenario}_history.csv", HISTORY_COLUMNS,
                   history_rows(records, seed))
        rows = []
        for u, m in zip(grid, mean):
            q = st.domain.to_weights(u)
            rows.append([q[0], q[1], m])
        _write_csv(out / f"fig5_{scenario}_surface.csv", ["q_cont", "q_adv", "J_mean"], rows)
        _write_csv(out / f"fig5_{scenario}_argmin.csv", ["q_cont", "q_adv", "J_mean"],
                   [[best[0], best[1], float(np.min(mean))]])
    return res


@dataclass
class LearningCurves:
    records: dict               # (scenario, mode, seed) -> list[TuningRecord]

    def best_so_far(self, scenario: str, mode: str) -> np.ndarray:
        """(n_seeds, n_iter) best-so-far J."""
        runs = [best_so_far(v) for (sc, m, _), v in sorted(self.records.items())
                if sc == scenario and m == mode]
        return np.array(runs)


def experiment_contextual_vs_standard(env: Environment, scenarios: Optional[Sequence[str]] = None,
                                      seeds: Optional[Sequence[int]] = None,
                                      n_iter: Optional[int] = None, out=None) -> LearningCurves:
    """Standard BO from scratch vs contextual BO pretrained on earlier scenarios."""
    ex = env.config.experiments
    scenarios = list(scenarios or env.config.scenario_names)
    seeds = list(range(ex.fig7_seeds)) if seeds is None else list(seeds)
    n_iter = n_iter or ex.fig7_iters
    recs = {}
    for seed in seeds:
        pool: list[TuningRecord] = []
        for i, sc in enumerate(scenarios):
            run_seed = 1000 * seed + i
            recs[(sc, "standard", seed)] = tune(env, sc, "standard", n_iter, run_seed)
            new = tune(env, sc, "contextual", n_iter, run_seed, pretrain=pool)
            recs[(sc, "contextual", seed)] = new
            pool = pool + new
    res = LearningCurves(recs)
    if out is not None:
        rows = []
        for (sc, mode, seed), rs in sorted(recs.items()):
            bsf = best_so_far(rs)
            for r, b in zip(rs, bsf):
                rows.append([sc, r.iteration, mode, seed, r.q_cont, r.q_adv, *r.context, r.J,
                             r.lap_time, r.deviation_cm, b])
        _write_csv(Path(out) / "fig7_history.csv",
                   ["scenario"] + HISTORY_COLUMNS + ["best_so_far"], rows)
    return res


@dataclass
class HeldOutResult:
    pool: list                  # pretraining records from the other scenarios
    contextual: list            # per seed, records on the held-out scenario
    standard: list
    best_known: float           # lowest completed J seen on the held-out scenario

    def contextual_first(self) -> np.ndarray:
        return np.array([rs[0].J for rs in self.contextual])

    @property
    def contextual_bsf(self) -> np.ndarray:
        return np.array([best_so_far(rs) for rs in self.contextual])

    @property
    def standard_bsf(self) -> np.ndarray:
        return np.array([best_so_far(rs) for rs in self.standard])


def experiment_held_out(env: Environment, held_out: str = "car2_mass",
                        seeds: Sequence[int] = range(5), pretrain_iters: Optional[int] = None,
                        n_contextual: int = 3, n_standard: int = 10, seed: int = 0,
                        out=None) -> HeldOutResult:
    """Contextual BO on an unseen scenario, pretrained on all the others.

    The pool is built once by contextual tuning on the other scenarios in
    config order.  Each seed then runs standard BO from scratch and
    contextual BO warm-started from the pool on ``held_out``.
    """
    pretrain_iters = pretrain_iters or env.config.experiments.fig7_iters
    pool: list[TuningRecord] = []
    others = [s for s in env.config.scenario_names if s != held_out]
    for i, sc in enumerate(others):
        pool = pool + tune(env, sc, "contextual", pretrain_iters, seed + i, pretrain=pool)
    ctx, std = [], []
    for s in seeds:
        run_seed = 100 + s
        std.append(tune(env, held_out, "standard", n_standard, run_seed))
        ctx.append(tune(env, held_out, "contextual", n_contextual, run_seed, pretrain=pool))
    done = [r.J for rs in ctx + std for r in rs if r.completed and np.isfinite(r.J)]
    res = HeldOutResult(pool, ctx, std, float(min(done)) if done else float("nan"))
    if out is not None:
        rows = [["pool", r.iteration, r.mode, seed, r.q_cont, r.q_adv, *r.context, r.J,
                 r.lap_time, r.deviation_cm] for r in pool]
        for s, c_rs, s_rs in zip(seeds, ctx, std):
            rows += [[held_out, *row] for row in history_rows(c_rs + s_rs, s)]
        _write_csv(Path(out) / "held_out_history.csv", ["scenario"] + HISTORY_COLUMNS, rows)
    return res
