import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from racetune.harness import Session
from racetune.kernels import dynamics as kd
from racetune.residual import (TelemetryLog, blr_fit, blr_fit_auto, context_from_lap,
                               feature_matrix, fit_residual, ground_truth_states, learning_data,
                               prediction_errors, taylor_features)

DT = 1.0 / 35.0


def open_loop_log(params, hz=35.0, seconds=8.0, noise=(0.0, 0.0, 0.0), seed=0):
    """Slalom with smooth inputs; returns the log and the true states."""
    dt = 1.0 / hz
    n = int(seconds * hz)
    t = np.arange(n) * dt
    u = np.column_stack([0.25 * np.sin(2 * np.pi * 0.4 * t),
                         0.3 + 0.1 * np.sin(2 * np.pi * 0.25 * t)])
    p = params.to_vector()
    x = np.array([0.0, 0.0, 0.0, 1.0, 0.0, 0.0])
    xs = np.empty((n, 6))
    for k in range(n):
        xs[k] = x
        x = kd.rk4_step(x, u[k], p, dt, 2)
    rng = np.random.default_rng(seed)
    poses = xs[:, :3] + np.asarray(noise) * rng.standard_normal((n, 3))
    return TelemetryLog(t, poses, u, true_states=xs), xs


def test_features_vanish_without_slip(nominal):
    np.testing.assert_array_equal(taylor_features([0, 0, 0, 1.0, 0, 0], [0, 0.5], nominal), [0, 0])


def test_front_feature_vanishes_at_right_angle_steer(nominal):
    phi = taylor_features([0, 0, 0, 1.0, 0.2, 1.0], [math.pi / 2, 0.0], nominal)
    assert phi[0] == pytest.approx(0.0, abs=1e-15)


@given(vx=st.floats(-3, 5), vy=st.floats(-3, 3), om=st.floats(-20, 20), d=st.floats(-1.5, 1.5))
def test_features_bounded(nominal, vx, vy, om, d):
    phi = taylor_features([0, 0, 0, vx, vy, om], [d, 0.0], nominal)
    assert np.all(np.abs(phi) <= 1.0)


@pytest.mark.parametrize("state,inp", [
    ([0, 0, 0.3, 1.8, 0.12, 2.5], [0.1, 0.4]),
    ([0, 0, -1.0, 2.4, -0.2, -4.0], [-0.3, 0.8]),
    ([0, 0, 2.0, 0.8, 0.05, 1.0], [0.35, 0.1]),
])
def test_features_are_peak_factor_derivatives(nominal, state, inp):
    """phi times the known constants equals df/dD_f and df/dD_r."""
    x, u = np.array(state, float), np.array(inp, float)
    phi = taylor_features(x, u, nominal)
    p = nominal.to_vector()

    def fd(idx):
        h = 1e-6 * p[idx]
        pp, pm = p.copy(), p.copy()
        pp[idx] += h
        pm[idx] -= h
        return (kd.continuous_dynamics(x, u, pp) - kd.continuous_dynamics(x, u, pm)) / (2 * h)

    d_f, d_r = fd(kd.P_DF), fd(kd.P_DR)
    m, iz, lf, lr = nominal.m, nominal.I_z, nominal.l_f, nominal.l_r
    np.testing.assert_allclose(d_f[4:], [phi[0] / m, lf * phi[0] / iz], rtol=1e-5)
    np.testing.assert_allclose(d_r[4:], [phi[1] / m, -lr * phi[1] / iz], rtol=1e-5)
    # the front force also brakes the car through -F_f sin(delta); this row
    # is outside the learned subspace
    raw_f = phi[0] / math.cos(u[0])
    assert d_f[3] == pytest.approx(-raw_f * math.sin(u[0]) / m, rel=1e-5)
    np.testing.assert_allclose(np.concatenate([d_f[:3], d_r[:4]]), 0.0, atol=1e-6)


def test_ground_truth_straight_line():
    t = np.arange(100) * DT
    v, psi = 1.3, 0.4
    poses = np.column_stack([v * np.cos(psi) * t, v * np.sin(psi) * t, np.full(100, psi)])
    gt = ground_truth_states(t, poses)
    np.testing.assert_allclose(gt[:, 3], v, atol=1e-6)
    np.testing.assert_allclose(gt[:, 4:], 0.0, atol=1e-6)


def test_ground_truth_circle():
    v, r = 1.5, 0.8
    t = np.arange(300) * DT
    a = v / r * t
    poses = np.column_stack([r * np.sin(a), r * (1 - np.cos(a)), a])
    gt = ground_truth_states(t, poses)
    np.testing.assert_allclose(gt[5:-5, 5], v / r, rtol=1e-2)
    np.testing.assert_allclose(np.hypot(gt[5:-5, 3], gt[5:-5, 4]), v, rtol=1e-2)


def test_ground_truth_noise_below_difference_floor():
    sigma, v, n = 1e-3, 1.2, 4000
    t = np.arange(n) * DT
    rng = np.random.default_rng(0)
    poses = np.column_stack([v * t, np.zeros(n), np.zeros(n)])
    poses[:, :2] += sigma * rng.standard_normal((n, 2))
    gt = ground_truth_states(t, poses)
    floor = sigma / (math.sqrt(2.0) * DT)  # std of a raw central difference
    rmse = np.sqrt(np.mean((gt[10:-10, 3] - v) ** 2))
    assert rmse < 3 * floor
    assert np.sqrt(np.mean(gt[10:-10, 4] ** 2)) < 3 * floor


def test_ground_truth_shift_invariant(nominal):
    log, _ = open_loop_log(nominal)
    a = ground_truth_states(log.t, log.poses)
    b = ground_truth_states(log.t + 12.5, log.poses)
    np.testing.assert_allclose(a, b, atol=1e-9)
    k = 17
    c = ground_truth_states(log.t[k:], log.poses[k:])
    np.testing.assert_allclose(c[10:-10], a[k + 10:-10], atol=1e-9)


def test_ground_truth_rejects_short_logs():
    with pytest.raises(ValueError):
        ground_truth_states(np.arange(10) * DT, np.zeros((10, 3)))


def test_prediction_errors_vanish_for_nominal_data(nominal):
    _, xs = open_loop_log(nominal)
    u = open_loop_log(nominal)[0].inputs
    _, _, e = prediction_errors(xs, u, nominal)
    np.testing.assert_array_equal(e, 0.0)


def test_more_grip_is_invisible_when_driving_straight(nominal):
    grippy = nominal.replace(D_f=1.2 * nominal.D_f)
    n = 80
    u = np.tile([0.0, 0.4], (n, 1))
    x = np.array([0.0, 0.0, 0.0, 1.0, 0.0, 0.0])
    xs = []
    for k in range(n):
        xs.append(x)
        x = kd.rk4_step(x, u[k], grippy.to_vector(), DT, 2)
    _, _, e = prediction_errors(np.array(xs), u, nominal)
    np.testing.assert_allclose(e, 0.0, atol=1e-12)


def test_blr_matches_normal_equations(rng):
    phi = rng.standard_normal((200, 2))
    y = phi @ [0.3, -1.2] + 0.1 * rng.standard_normal(200)
    lam, s2 = 1.7, 0.01
    post = blr_fit(phi, y, lam, s2)
    a_inv = np.linalg.inv(phi.T @ phi + s2 * lam * np.eye(2))
    np.testing.assert_allclose(post.mean, a_inv @ phi.T @ y, rtol=0, atol=1e-10)
    np.testing.assert_allclose(post.cov, s2 * a_inv, rtol=0, atol=1e-10)


def test_blr_flat_prior_is_least_squares(rng):
    phi = rng.standard_normal((50, 2))
    y = rng.standard_normal(50)
    post = blr_fit(phi, y, 1e-14, 1.0)
    ols = np.linalg.lstsq(phi, y, rcond=None)[0]
    np.testing.assert_allclose(post.mean, ols, atol=1e-10)


def test_blr_zero_targets(rng):
    post = blr_fit(rng.standard_normal((10, 2)), np.zeros(10), 1.0, 0.1)
    np.testing.assert_array_equal(post.mean, 0.0)


def test_blr_interpolates_two_points():
    phi = np.array([[1.0, 0.5], [-0.3, 2.0]])
    y = np.array([0.7, -1.1])
    post = blr_fit(phi, y, 1.0, 1e-14)
    np.testing.assert_allclose(phi @ post.mean, y, atol=1e-10)


def test_blr_singular_design_warns():
    phi = np.zeros((5, 2))
    with pytest.warns(RuntimeWarning):
        post = blr_fit(phi, np.zeros(5), 0.0, 1.0)
    assert np.all(np.isfinite(post.mean))


def test_blr_needs_two_points():
    with pytest.raises(ValueError):
        blr_fit(np.ones((1, 2)), np.ones(1), 1.0, 1.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 40), extra=st.integers(1, 40))
def test_posterior_covariance_shrinks_with_data(seed, n, extra):
    r = np.random.default_rng(seed)
    phi = r.standard_normal((n + extra, 2))
    y = r.standard_normal(n + extra)
    prior = np.eye(2)
    a = blr_fit(phi[:n], y[:n], 1.0, 0.5).cov
    b = blr_fit(phi, y, 1.0, 0.5).cov
    assert np.all(np.linalg.eigvalsh(prior - a) >= -1e-12)
    assert np.all(np.linalg.eigvalsh(a - b) >= -1e-12)
    assert np.all(np.linalg.eigvalsh(b) > 0)
    np.testing.assert_allclose(b, b.T)


def test_noise_variance_estimate(rng):
    phi = rng.uniform(-1, 1, (3000, 2))
    y = phi @ [0.5, 0.2] + 0.05 * rng.standard_normal(3000)
    post = blr_fit_auto(phi, y)
    assert post.noise_var == pytest.approx(0.05 ** 2, rel=0.1)
    np.testing.assert_allclose(post.mean, [0.5, 0.2], atol=0.01)


def test_context_vanishes_for_nominal_plant_at_high_rate(nominal):
    # Velocity reconstruction error scales with dt^2; at 350 Hz the bias
    # left in the fit is far below the context scale.
    log, _ = open_loop_log(nominal, hz=350.0)
    c, model = context_from_lap(log, nominal, dt=1 / 350, substeps=2)
    assert c.shape == (4,)
    assert np.linalg.norm(c) < 1e-3


def test_context_recovers_peak_factor_error(nominal):
    # With exact (high-rate) data, scaling D_f and D_r by k gives
    # c = (k-1) * [D_f/m, D_r/m, l_f D_f/I_z, -l_r D_r/I_z] * dt to first order.
    true = nominal.replace(D_f=0.85 * nominal.D_f, D_r=0.85 * nominal.D_r)
    hz = 350.0
    log, _ = open_loop_log(true, hz=hz)
    c, _ = context_from_lap(log, nominal, dt=1 / hz, substeps=2, lambda_prior=1e-6)
    dt = 1 / hz
    want = -0.15 * dt * np.array([nominal.D_f / nominal.m, nominal.D_r / nominal.m,
                                  nominal.l_f * nominal.D_f / nominal.I_z,
                                  -nominal.l_r * nominal.D_r / nominal.I_z])
    np.testing.assert_allclose(c, want, rtol=0.05)


@pytest.fixture(scope="module")
def car2_laps(env):
    sess = Session(env, "car2", seed=0)
    w = env.default_weights()
    return [sess.drive_lap(w) for _ in range(7)][1:]


def test_context_repeatable_over_laps(nominal, car2_laps):
    cs = np.array([context_from_lap(l.telemetry, nominal)[0] for l in car2_laps])
    mean, std = cs.mean(axis=0), cs.std(axis=0)
    big = np.abs(mean) > 0.1 * np.max(np.abs(mean))
    assert np.all(std[big] / np.abs(mean[big]) < 0.3)


def test_learned_model_improves_held_out_prediction(env, nominal):
    true = nominal.replace(D_f=0.75 * nominal.D_f, D_r=0.75 * nominal.D_r, I_z=1.25 * nominal.I_z)
    sess = Session(env, true, seed=3)
    laps = [sess.drive_lap(env.default_weights()) for _ in range(4)][1:]
    assert all(l.completed for l in laps)
    train = [learning_data(l.telemetry, nominal) for l in laps[:2]]
    phi_te, e_te, _, _ = learning_data(laps[2].telemetry, nominal)
    model = fit_residual(np.vstack([d[0] for d in train]), np.vstack([d[1] for d in train]))
    rmse_nom = np.sqrt(np.mean(e_te ** 2, axis=0))
    rmse_blr = np.sqrt(np.mean((e_te - phi_te @ model.coefficients.T) ** 2, axis=0))
    assert np.all(rmse_blr <= 0.5 * rmse_nom)


def test_residual_model_predict(nominal, car2_laps):
    c, model = context_from_lap(car2_laps[0].telemetry, nominal)
    x = np.array([[0, 0, 0, 1.5, 0.05, 1.0]])
    u = np.array([[0.1, 0.3]])
    mean, std = model.predict(x, u, nominal)
    np.testing.assert_allclose(mean[0], model.coefficients @ feature_matrix(x, u, nominal)[0])
    assert np.all(std > 0)
    np.testing.assert_array_equal(model.context, c)
