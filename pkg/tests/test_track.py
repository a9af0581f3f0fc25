import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from racetune.config import data_path
from racetune.track import (TrackFormatError, boundary_margin, contouring_lag_errors, load_track,
                            project, save_track, track_from_waypoints, unwrap_progress)

# Demo track lap length as computed by the loader at ds = 2 cm (regression fixture).
DEMO_LENGTH = 10.7168


@pytest.fixture(scope="module")
def demo():
    return load_track(data_path("demo_track.csv"))


def circle_waypoints(radius=1.0, step_deg=1.0):
    a = np.deg2rad(np.arange(0.0, 360.0, step_deg))
    return np.column_stack([radius * np.cos(a), radius * np.sin(a)])


def test_circle_circumference(tmp_path):
    path = tmp_path / "circle.csv"
    xy = circle_waypoints()
    save_track(path, xy, 0.3, 0.3)
    tr = load_track(path)
    assert tr.total_length == pytest.approx(2 * math.pi, rel=1e-3)
    np.testing.assert_allclose(tr.curvature[10:-10], 1.0, rtol=2e-2)


def test_degenerate_file_rejected(tmp_path):
    path = tmp_path / "tiny.csv"
    save_track(path, np.array([[0, 0], [1, 0], [0, 1.0]]), 0.2, 0.2)
    with pytest.raises(TrackFormatError):
        load_track(path)


def test_malformed_rows_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    save_track(path, circle_waypoints(step_deg=10), 0.2, 0.2)
    path.write_text(path.read_text() + "1.0,abc,0.2,0.2\n")
    with pytest.raises(TrackFormatError):
        load_track(path)
    path.write_text("x,y\n1,2\n")
    with pytest.raises(TrackFormatError):
        load_track(path)


def test_open_loop_rejected():
    a = np.deg2rad(np.arange(0.0, 270.0, 5.0))
    with pytest.raises(TrackFormatError):
        track_from_waypoints(np.column_stack([np.cos(a), np.sin(a)]), 0.2)


def test_nonpositive_width_rejected():
    with pytest.raises(TrackFormatError):
        track_from_waypoints(circle_waypoints(step_deg=10), 0.0)


def test_demo_track_loads(demo):
    assert demo.total_length == pytest.approx(DEMO_LENGTH, abs=1e-4)
    assert 8.0 <= demo.total_length <= 15.0
    assert np.hypot(demo.x[-1] - demo.x[0], demo.y[-1] - demo.y[0]) < 1e-9
    assert np.all(np.diff(demo.s) > 0)
    assert np.all(demo.half_width_samples > 0)
    # a simple closed loop turns through exactly one full revolution
    turning = demo.heading[-1] - demo.heading[0]
    assert abs(abs(turning) - 2 * math.pi) < 1e-6


def test_project_fixed_point(demo):
    p = demo.position(3.0)
    assert project(demo, p, 2.9) == pytest.approx(3.0, abs=demo.ds)


def test_project_lateral_offset(demo):
    p = demo.position(3.0) + 0.05 * demo.normal(3.0)
    assert project(demo, p, 2.9) == pytest.approx(3.0, abs=demo.ds)


@settings(max_examples=100, deadline=None)
@given(s=st.floats(0, DEMO_LENGTH - 1e-6), off=st.floats(-0.1, 0.1), dh=st.floats(-0.3, 0.3))
def test_project_matches_brute_force(demo, s, off, dh):
    p = demo.position(s) + off * demo.normal(s)
    got = project(demo, p, (s + dh) % demo.total_length)
    d2 = (demo.x[:-1] - p[0]) ** 2 + (demo.y[:-1] - p[1]) ** 2
    brute = demo.s[int(np.argmin(d2))]
    gap = abs((got - brute + 0.5 * demo.total_length) % demo.total_length - 0.5 * demo.total_length)
    assert gap <= demo.ds + 1e-9


@settings(max_examples=100, deadline=None)
@given(s=st.floats(0, DEMO_LENGTH - 1e-6))
def test_project_inverts_centerline(demo, s):
    got = project(demo, demo.position(s), s)
    gap = abs((got - s + 0.5 * demo.total_length) % demo.total_length - 0.5 * demo.total_length)
    assert gap <= demo.ds


def test_contouring_errors_on_centerline(demo):
    e = contouring_lag_errors(demo, demo.position(4.2), 4.2)
    assert e.e_lag == pytest.approx(0.0, abs=1e-12)
    assert e.e_cont == pytest.approx(0.0, abs=1e-12)


def test_contouring_errors_pure_normal(demo):
    e = contouring_lag_errors(demo, demo.position(4.2) + 0.03 * demo.normal(4.2), 4.2)
    assert e.e_lag == pytest.approx(0.0, abs=1e-12)
    assert e.e_cont == pytest.approx(0.03, abs=1e-12)


def test_contouring_errors_pure_tangent(demo):
    e = contouring_lag_errors(demo, demo.position(4.2) + 0.02 * demo.tangent(4.2), 4.2)
    assert e.e_lag == pytest.approx(-0.02, abs=1e-12)
    assert e.e_cont == pytest.approx(0.0, abs=1e-12)


@given(s=st.floats(0, DEMO_LENGTH), dx=st.floats(-1, 1), dy=st.floats(-1, 1))
def test_errors_are_orthogonal_decomposition(demo, s, dx, dy):
    p = demo.position(s) + np.array([dx, dy])
    e = contouring_lag_errors(demo, p, s)
    assert e.e_lag ** 2 + e.e_cont ** 2 == pytest.approx(dx * dx + dy * dy, rel=1e-10, abs=1e-14)


def test_boundary_margin(demo):
    s = 2.0
    w = demo.half_width(s)
    n = demo.normal(s)
    assert boundary_margin(demo, demo.position(s), s) == pytest.approx(w)
    assert boundary_margin(demo, demo.position(s) + w * n, s) == pytest.approx(0.0, abs=1e-12)
    assert boundary_margin(demo, demo.position(s) - (w + 0.01) * n, s) == pytest.approx(-0.01)


def test_progress_unwraps_over_a_lap(demo):
    L = demo.total_length
    s_path = np.linspace(0, 2 * L, 2001) % L
    progress = np.cumsum([0.0] + [unwrap_progress(demo, a, b) for a, b in zip(s_path[:-1], s_path[1:])])
    assert np.all(np.diff(progress) > 0)
    assert progress[-1] == pytest.approx(2 * L)
