import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from racetune.bayesopt import (N_CONTEXT, Domain, GpError, GpSurrogate, Hyperparameters,
                               TuningRecord, TuningSettings, best_so_far, fit_hyperparameters,
                               kernel, lcb, run_tuning, sobol_points, suggest, unit_grid)

HYP = Hyperparameters(np.log([0.3, 0.5]), np.log([1.0, 2.0, 0.5, 1.5]), math.log(1.7),
                      math.log(1e-3))


def oracle_kernel(za, zb, hyp, contextual=True):
    """Independent double loop over the SE product kernel."""
    ls = np.exp(np.concatenate([hyp.log_ls_theta, hyp.log_ls_context]))
    dims = 6 if contextual else 2
    out = np.empty((len(za), len(zb)))
    for i, a in enumerate(za):
        for j, b in enumerate(zb):
            r2 = sum(((a[d] - b[d]) / ls[d]) ** 2 for d in range(dims))
            out[i, j] = math.exp(hyp.log_signal) * math.exp(-0.5 * r2)
    return out


def random_data(rng, n):
    return rng.random((n, 2)), rng.standard_normal((n, N_CONTEXT)), rng.standard_normal(n)


def test_kernel_diagonal_is_signal_variance(rng):
    th, c, _ = random_data(rng, 5)
    k = kernel(th, c, th, c, HYP)
    np.testing.assert_allclose(np.diag(k), 1.7)
    np.testing.assert_allclose(k, k.T)


def test_kernel_psd_on_random_points(rng):
    th, c, _ = random_data(rng, 50)
    k = kernel(th, c, th, c, HYP)
    assert np.min(np.linalg.eigvalsh(k + 1e-8 * np.eye(50))) > 0


def test_kernel_matches_loop_oracle(rng):
    th, c, _ = random_data(rng, 7)
    za = np.hstack([th, c])
    np.testing.assert_allclose(kernel(th, c, th, c, HYP), oracle_kernel(za, za, HYP), atol=1e-14)


@pytest.mark.parametrize("n", [1, 3, 8, 20])
@pytest.mark.parametrize("contextual", [True, False])
def test_posterior_matches_direct_inversion(rng, n, contextual):
    th, c, y = random_data(rng, n)
    sur = GpSurrogate(th, c, y, HYP, contextual=contextual, standardize=False)
    q_th = rng.random((9, 2))
    q_c = rng.standard_normal(N_CONTEXT)
    mu, var = sur.posterior(q_th, q_c)
    z = np.hstack([th, c])
    zq = np.hstack([q_th, np.tile(q_c, (9, 1))])
    k_inv = np.linalg.inv(oracle_kernel(z, z, HYP, contextual) + 1e-3 * np.eye(n))
    ks = oracle_kernel(zq, z, HYP, contextual)
    np.testing.assert_allclose(mu, ks @ k_inv @ y, rtol=0, atol=1e-10)
    np.testing.assert_allclose(var, 1.7 - np.einsum("ij,jk,ik->i", ks, k_inv, ks), rtol=0,
                               atol=1e-10)


def test_standardized_posterior_matches_transformed_oracle(rng):
    th, c, y = random_data(rng, 12)
    y = 8.0 + 0.5 * y
    sur = GpSurrogate(th, c, y, HYP)
    q_th, q_c = rng.random((4, 2)), rng.standard_normal(N_CONTEXT)
    cm, cs = c.mean(0), c.std(0)
    ym, ys = y.mean(), y.std()
    z = np.hstack([th, (c - cm) / cs])
    zq = np.hstack([q_th, np.tile((q_c - cm) / cs, (4, 1))])
    k_inv = np.linalg.inv(oracle_kernel(z, z, HYP) + 1e-3 * np.eye(12))
    ks = oracle_kernel(zq, z, HYP)
    mu, var = sur.posterior(q_th, q_c)
    np.testing.assert_allclose(mu, ym + ys * (ks @ k_inv @ ((y - ym) / ys)), atol=1e-10)
    np.testing.assert_allclose(var, ys ** 2 * (1.7 - np.einsum("ij,jk,ik->i", ks, k_inv, ks)),
                               atol=1e-10)


def test_empty_surrogate_returns_prior():
    sur = GpSurrogate(hyp=HYP, standardize=False)
    mu, var = sur.posterior(np.array([[0.2, 0.4], [0.9, 0.1]]))
    np.testing.assert_array_equal(mu, 0.0)
    np.testing.assert_allclose(var, 1.7)


def test_interpolates_training_points_without_noise(rng):
    th, c, y = random_data(rng, 6)
    hyp = Hyperparameters(HYP.log_ls_theta, HYP.log_ls_context, HYP.log_signal, math.log(1e-12))
    sur = GpSurrogate(th, c, y, hyp)
    for i in range(6):
        mu, var = sur.posterior(th[i:i + 1], c[i])
        assert mu[0] == pytest.approx(y[i], abs=1e-5)
        assert var[0] < 1e-5


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 25))
def test_posterior_variance_bounded_by_prior(seed, n):
    r = np.random.default_rng(seed)
    th, c, y = random_data(r, n)
    sur = GpSurrogate(th, c, y, HYP, standardize=False)
    _, var = sur.posterior(r.random((30, 2)), r.standard_normal(N_CONTEXT))
    assert np.all(var >= 0.0)
    assert np.all(var <= 1.7 + 1e-12)


def test_single_context_reduces_to_standard_gp(rng):
    th, _, y = random_data(rng, 15)
    c = np.tile(rng.standard_normal(N_CONTEXT), (15, 1))
    ctx = GpSurrogate(th, c, y, HYP, contextual=True)
    std = GpSurrogate(th, c, y, HYP, contextual=False)
    q = rng.random((20, 2))
    a, b = ctx.posterior(q, c[0]), std.posterior(q)
    np.testing.assert_allclose(a[0], b[0], atol=1e-10)
    np.testing.assert_allclose(a[1], b[1], atol=1e-10)


def test_cholesky_failure_is_an_error():
    hyp = Hyperparameters(log_signal=40.0, log_noise=math.log(1e-6))
    th = np.tile([0.5, 0.5], (3, 1))
    with pytest.raises(GpError):
        GpSurrogate(th, np.zeros((3, N_CONTEXT)), [1.0, 2.0, 3.0], hyp)


def fixture_surrogate(rng, contextual=False):
    th = rng.random((25, 2))
    y = (th[:, 0] - 0.3) ** 2 + 2 * (th[:, 1] - 0.7) ** 2 + 0.01 * rng.standard_normal(25)
    return GpSurrogate(th, np.zeros((25, N_CONTEXT)), y, Hyperparameters(), contextual)


def test_zero_beta_minimizes_the_mean(rng):
    sur = fixture_surrogate(rng)
    grid = unit_grid(61)
    mu, _ = sur.posterior(grid)
    got = suggest(sur, None, beta=0.0, refine=False)
    np.testing.assert_array_equal(got, grid[np.argmin(mu)])


def test_large_beta_explores_max_variance(rng):
    th = rng.random((6, 2)) * 0.3
    sur = GpSurrogate(th, np.zeros((6, N_CONTEXT)), np.ones(6), Hyperparameters(), False)
    grid = unit_grid(61)
    _, var = sur.posterior(grid)
    got = suggest(sur, None, beta=1e6, refine=False)
    np.testing.assert_array_equal(got, grid[np.argmax(var)])


def test_grid_argmin_agrees_with_multistart_refinement(rng):
    from scipy.optimize import minimize

    sur = fixture_surrogate(rng)
    f = lambda t: float(lcb(sur, t[None, :], None, 2.0)[0])
    starts = np.random.default_rng(9).random((10, 2))
    runs = [minimize(f, s, method="L-BFGS-B", bounds=[(0, 1)] * 2) for s in starts]
    best = min(runs, key=lambda r: r.fun).x
    got = suggest(sur, None, beta=2.0, refine=False)
    assert np.max(np.abs(got - best)) <= 1.0 / 60 + 1e-9


def test_empty_surrogate_suggests_centre():
    np.testing.assert_array_equal(suggest(GpSurrogate(), np.zeros(N_CONTEXT)), [0.5, 0.5])


def two_context_surrogate(rng):
    c_a, c_b = np.array([1.0, 0.0, 0.0, 0.0]), np.array([-1.0, 0.5, 0.0, 0.0])
    th_a, th_b = rng.random((80, 2)), rng.random((80, 2))
    y_a = (th_a[:, 0] - 0.3) ** 2 + (th_a[:, 1] - 0.7) ** 2
    y_b = (th_b[:, 0] - 0.8) ** 2 + (th_b[:, 1] - 0.2) ** 2
    th = np.vstack([th_a, th_b])
    c = np.vstack([np.tile(c_a, (80, 1)), np.tile(c_b, (80, 1))])
    hyp = Hyperparameters(np.log([0.5, 0.5]), np.log(np.full(N_CONTEXT, 1.0)), 0.0,
                          math.log(1e-6))
    return GpSurrogate(th, c, np.concatenate([y_a, y_b]), hyp), c_a, c_b


def test_suggestion_follows_the_context(rng):
    sur, c_a, c_b = two_context_surrogate(rng)
    np.testing.assert_allclose(suggest(sur, c_a), [0.3, 0.7], atol=1.0 / 60)
    np.testing.assert_allclose(suggest(sur, c_b), [0.8, 0.2], atol=1.0 / 60)


def test_unseen_context_explores(rng):
    sur, _, _ = two_context_surrogate(rng)
    far = np.array([40.0, -40.0, 0.0, 0.0])
    got = suggest(sur, far)
    _, var = sur.posterior(unit_grid(61), far)
    _, v_got = sur.posterior(got[None, :], far)
    assert v_got[0] == pytest.approx(np.max(var), rel=1e-9)
    assert v_got[0] == pytest.approx(np.exp(sur.hyp.log_signal) * sur.y_std ** 2, rel=1e-6)


def test_suggest_permutation_invariant(rng):
    th, c, y = random_data(rng, 20)
    a = GpSurrogate(th, c, y, HYP)
    p = rng.permutation(20)
    b = GpSurrogate(th[p], c[p], y[p], HYP)
    np.testing.assert_allclose(suggest(a, c[0]), suggest(b, c[0]), atol=1e-9)


def sample_gp(rng, n, ls, noise=1e-4):
    th = rng.random((n, 2))
    hyp = Hyperparameters(np.log([ls, ls]), log_signal=0.0, log_noise=math.log(noise))
    k = kernel(th, None, th, None, hyp, contextual=False) + noise * np.eye(n)
    y = np.linalg.cholesky(k) @ rng.standard_normal(n)
    return th, y


def test_recovers_known_lengthscale():
    th, y = sample_gp(np.random.default_rng(4), 60, 0.3)
    sur = GpSurrogate(th, np.zeros((60, N_CONTEXT)), y, Hyperparameters(np.log([1.0, 1.0])),
                      contextual=False)
    fit = fit_hyperparameters(sur, restarts=4, seed=0)
    ls = np.exp(fit.hyp.log_ls_theta)
    assert np.all((0.15 <= ls) & (ls <= 0.6)), ls
    assert fit.log_marginal_likelihood() >= sur.log_marginal_likelihood()


def test_duplicated_data_keeps_noise_floor():
    th, y = sample_gp(np.random.default_rng(5), 20, 0.3)
    th2, y2 = np.vstack([th, th]), np.concatenate([y, y])
    sur = GpSurrogate(th2, np.zeros((40, N_CONTEXT)), y2, Hyperparameters(), contextual=False)
    fit = fit_hyperparameters(sur, seed=1)
    assert np.exp(fit.hyp.log_noise) >= 1e-6 * (1 - 1e-9)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 1000))
def test_fit_never_lowers_likelihood(seed):
    r = np.random.default_rng(seed)
    th, c, y = random_data(r, 12)
    sur = GpSurrogate(th, c, y, HYP)
    fit = fit_hyperparameters(sur, restarts=1, sweeps=2, seed=seed)
    assert fit.log_marginal_likelihood() >= sur.log_marginal_likelihood() - 1e-12


def test_fit_needs_five_points(rng):
    th, c, y = random_data(rng, 4)
    sur = GpSurrogate(th, c, y, HYP)
    assert fit_hyperparameters(sur) is sur


def test_sobol_points_deterministic():
    a, b = sobol_points(8, 3), sobol_points(8, 3)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (8, 2) and np.all((a >= 0) & (a < 1))
    assert not np.array_equal(a, sobol_points(8, 4))


def test_domain_roundtrip():
    dom = Domain()
    u = np.array([0.25, 0.6])
    np.testing.assert_allclose(dom.to_unit(*dom.to_weights(u)), u)
    assert dom.to_weights([0, 0]) == (1.0, 0.01)


def branin(u):
    x1 = -5.0 + 15.0 * u[0]
    x2 = 15.0 * u[1]
    b, c, t = 5.1 / (4 * math.pi ** 2), 5 / math.pi, 1 / (8 * math.pi)
    return (x2 - b * x1 ** 2 + c * x1 - 6) ** 2 + 10 * (1 - t) * math.cos(x1) + 10


BRANIN_MIN = 0.397887


class FunctionEvaluator:
    """Evaluator stand-in driven by an analytic objective of the unit square."""

    def __init__(self, fn, domain=Domain(), fail=lambda u: False, context=np.zeros(N_CONTEXT)):
        self.fn, self.domain, self.fail = fn, domain, fail
        self.ctx = np.asarray(context, dtype=float)
        self.telemetry_laps = 0
        self.calls = []

    def evaluate(self, q_cont, q_adv, residual=None):
        u = self.domain.to_unit(q_cont, q_adv)
        self.calls.append(u)
        ok = not self.fail(u)
        j = self.fn(u)
        return {"J": j if ok else np.nan, "completed": ok, "lap_time": j, "deviation_cm": 0.0,
                "telemetry": "lap"}

    def telemetry_lap(self, q_cont, q_adv):
        self.telemetry_laps += 1
        return "lap"

    def context(self, telemetry):
        return self.ctx, None


def test_zero_iterations_returns_pretrain():
    pre = [TuningRecord(1.0, 0.1, np.zeros(N_CONTEXT), 3.0)]
    assert run_tuning(FunctionEvaluator(branin), "contextual", 0, pretrain=pre) == pre


def test_unknown_mode_rejected():
    with pytest.raises(ValueError):
        run_tuning(FunctionEvaluator(branin), "greedy", 3)


def test_branin_simple_regret():
    regrets = []
    for seed in range(5):
        hist = run_tuning(FunctionEvaluator(branin), "standard", 30, seed=seed)
        regrets.append(min(r.J for r in hist) - BRANIN_MIN)
    assert np.median(regrets) < 0.05 * (308.13 - BRANIN_MIN)


def test_tuning_reproducible():
    a = run_tuning(FunctionEvaluator(branin), "standard", 12, seed=3)
    b = run_tuning(FunctionEvaluator(branin), "standard", 12, seed=3)
    assert [(r.q_cont, r.q_adv, r.J) for r in a] == [(r.q_cont, r.q_adv, r.J) for r in b]


def test_sobol_initialization_counts_within_budget():
    ev = FunctionEvaluator(branin)
    hist = run_tuning(ev, "standard", 10, seed=0, settings=TuningSettings(n_sobol=8))
    assert len(hist) == 10
    np.testing.assert_allclose(np.array(ev.calls[:8]), sobol_points(8, 0), atol=1e-12)
    assert all(np.all(r.context == 0) for r in hist)


def test_crash_penalty():
    ev = FunctionEvaluator(branin, fail=lambda u: u[1] > 0.5)
    hist = run_tuning(ev, "standard", 10, seed=0)
    done = [r for r in hist if r.completed]
    for i, r in enumerate(hist):
        if not r.completed:
            prior = [p.J for p in hist[:i] if p.completed]
            assert r.J == (2.0 * max(prior) if prior else 20.0)
    assert done and all(np.isfinite(r.J) for r in hist)


def test_contextual_loop_uses_context_and_pretrain():
    ctx = np.array([0.1, -0.2, 0.3, 0.4])
    pre = [TuningRecord(*Domain().to_weights(u), np.zeros(N_CONTEXT), branin(u))
           for u in sobol_points(10, 1)]
    ev = FunctionEvaluator(branin, context=ctx)
    hist = run_tuning(ev, "contextual", 3, seed=0, pretrain=pre)
    new = hist[len(pre):]
    assert ev.telemetry_laps == 1
    assert len(new) == 3 and all(np.array_equal(r.context, ctx) for r in new)
    # no Sobol points when pretraining data exist
    sobol = sobol_points(3, 0)
    assert not np.allclose(ev.calls[0], sobol[0])


def test_best_so_far_monotone():
    recs = [TuningRecord(1, 1, np.zeros(4), j) for j in [5.0, 6.0, 4.0, 4.5]]
    np.testing.assert_array_equal(best_so_far(recs), [5.0, 5.0, 4.0, 4.0])
