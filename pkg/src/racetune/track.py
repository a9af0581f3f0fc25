"""Closed, arc-length-parameterized race track.

Track files are CSV with header ``x_m,y_m,w_left_m,w_right_m``.  The
centerline is resampled to uniform arc spacing; tangents are smoothed by a
5-point centered average.  Self-intersection is not detected.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MIN_WAYPOINTS = 16
HEADER = ("x_m", "y_m", "w_left_m", "w_right_m")


class TrackFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ContouringErrors:
    e_lag: float
    e_cont: float


@dataclass(frozen=True, eq=False)
class Track:
    """Uniformly resampled closed centerline.

    Arrays have ``n + 1`` entries; the last sample repeats the first one at
    ``s = total_length``.  ``heading`` is unwrapped, so it changes by
    ``2*pi*winding`` over the lap.
    """

    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    curvature: np.ndarray
    w_left: np.ndarray
    w_right: np.ndarray
    total_length: float

    @property
    def ds(self) -> float:
        return float(self.s[1] - self.s[0])

    @property
    def n_samples(self) -> int:
        return len(self.s) - 1

    @property
    def centerline(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])

    @property
    def half_width_samples(self) -> np.ndarray:
        return np.minimum(self.w_left, self.w_right)

    def wrap(self, s: float) -> float:
        return float(np.mod(s, self.total_length))

    def _interp(self, arr: np.ndarray, s) -> np.ndarray:
        return np.interp(np.mod(s, self.total_length), self.s, arr)

    def position(self, s) -> np.ndarray:
        return np.array([self._interp(self.x, s), self._interp(self.y, s)])

    def tangent_angle(self, s) -> float:
        # unwrapped heading restarted every lap; only cos/sin are consumed
        return float(self._interp(self.heading, s))

    def tangent(self, s) -> np.ndarray:
        th = self.tangent_angle(s)
        return np.array([np.cos(th), np.sin(th)])

    def normal(self, s) -> np.ndarray:
        th = self.tangent_angle(s)
        return np.array([-np.sin(th), np.cos(th)])

    def half_width(self, s) -> float:
        return float(self._interp(self.half_width_samples, s))

    def kernel_arrays(self) -> tuple:
        """Arrays consumed by the compiled controller kernels."""
        return (
            float(self.total_length),
            float(self.ds),
            np.ascontiguousarray(self.x),
            np.ascontiguousarray(self.y),
            np.ascontiguousarray(self.heading),
            np.ascontiguousarray(self.curvature),
        )


def _resample(xy: np.ndarray, wl: np.ndarray, wr: np.ndarray, ds: float) -> Track:
    closed = np.vstack([xy, xy[:1]])
    seg = np.hypot(*np.diff(closed, axis=0).T)
    if np.any(seg <= 0):
        raise TrackFormatError("duplicate consecutive waypoints")
    s_way = np.concatenate([[0.0], np.cumsum(seg)])
    length = float(s_way[-1])
    n = max(int(round(length / ds)), MIN_WAYPOINTS)
    s = np.linspace(0.0, length, n + 1)
    x = np.interp(s, s_way, closed[:, 0])
    y = np.interp(s, s_way, closed[:, 1])
    x[-1], y[-1] = x[0], y[0]
    wl_c = np.append(wl, wl[0])
    wr_c = np.append(wr, wr[0])
    w_left = np.interp(s, s_way, wl_c)
    w_right = np.interp(s, s_way, wr_c)

    # periodic central differences, then 5-point smoothing of tangent vectors
    px = x[:-1]
    py = y[:-1]
    tx = np.roll(px, -1) - np.roll(px, 1)
    ty = np.roll(py, -1) - np.roll(py, 1)
    kernel = np.ones(5) / 5.0
    tx_s = np.convolve(np.concatenate([tx[-2:], tx, tx[:2]]), kernel, mode="valid")
    ty_s = np.convolve(np.concatenate([ty[-2:], ty, ty[:2]]), kernel, mode="valid")
    raw = np.arctan2(ty_s, tx_s)
    incr = np.mod(np.roll(raw, -1) - raw + np.pi, 2 * np.pi) - np.pi
    heading = raw[0] + np.concatenate([[0.0], np.cumsum(incr)])
    kappa = (np.roll(incr, 1) + incr) / (2.0 * (s[1] - s[0]))
    curvature = np.append(kappa, kappa[0])
    return Track(s=s, x=x, y=y, heading=heading, curvature=curvature,
                 w_left=w_left, w_right=w_right, total_length=length)


def track_from_waypoints(xy, w_left, w_right=None, ds: float = 0.02,
                         close_tol: float = 3.0) -> Track:
    """Build a track from ordered waypoints of a closed loop.

    A repeated final waypoint is dropped.  A gap between the last and first
    waypoint larger than ``close_tol`` times the median spacing is treated
    as an open loop and rejected.
    """
    xy = np.asarray(xy, dtype=float)
    wl = np.broadcast_to(np.asarray(w_left, dtype=float), (len(xy),)).copy()
    wr = wl.copy() if w_right is None else np.broadcast_to(
        np.asarray(w_right, dtype=float), (len(xy),)).copy()
    if xy.ndim != 2 or xy.shape[1] != 2:
        raise TrackFormatError("waypoints must be an (n, 2) array")
    if not np.all(np.isfinite(xy)) or not np.all(np.isfinite(wl)) or not np.all(np.isfinite(wr)):
        raise TrackFormatError("non-finite waypoint data")
    if np.hypot(*(xy[-1] - xy[0])) < 1e-9 and len(xy) > 1:
        xy, wl, wr = xy[:-1], wl[:-1], wr[:-1]
    if len(xy) < MIN_WAYPOINTS:
        raise TrackFormatError(f"need at least {MIN_WAYPOINTS} waypoints, got {len(xy)}")
    if np.any(wl <= 0) or np.any(wr <= 0):
        raise TrackFormatError("track widths must be positive")
    spacing = np.hypot(*np.diff(xy, axis=0).T)
    gap = np.hypot(*(xy[-1] - xy[0]))
    if gap > close_tol * np.median(spacing):
        raise TrackFormatError(f"open loop: end point is {gap:.3f} m from the start")
    return _resample(xy, wl, wr, ds)


def load_track(path, ds: float = 0.02) -> Track:
    path = Path(path)
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != HEADER:
            raise TrackFormatError(f"{path}: expected header {','.join(HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise TrackFormatError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise TrackFormatError(f"{path}:{lineno}: {exc}") from None
    if len(rows) < MIN_WAYPOINTS:
        raise TrackFormatError(f"{path}: need at least {MIN_WAYPOINTS} waypoints, got {len(rows)}")
    data = np.array(rows)
    return track_from_waypoints(data[:, :2], data[:, 2], data[:, 3], ds=ds)


def save_track(path, xy, w_left, w_right) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for (x, y), a, b in zip(xy, np.broadcast_to(w_left, len(xy)), np.broadcast_to(w_right, len(xy))):
            w.writerow([f"{x:.6f}", f"{y:.6f}", f"{a:.4f}", f"{b:.4f}"])


def project(track: Track, point, s_hint: float, window: float = 2.0) -> float:
    """Locally nearest arc position to ``point`` within ``s_hint +- window``."""
    n = track.n_samples
    ds = track.ds
    k0 = int(np.floor(np.mod(s_hint, track.total_length) / ds))
    half = min(int(np.ceil(window / ds)), n // 2)
    idx = np.arange(k0 - half, k0 + half + 1) % n
    px, py = float(point[0]), float(point[1])
    d2 = (track.x[idx] - px) ** 2 + (track.y[idx] - py) ** 2
    j = int(np.argmin(d2))
    k = int(idx[j])
    best_s = k * ds
    best_d2 = float(d2[j])
    for a in ((k - 1) % n, k):
        b = a + 1
        ax, ay = track.x[a], track.y[a]
        vx, vy = track.x[b] - ax, track.y[b] - ay
        seg2 = vx * vx + vy * vy
        t = min(max(((px - ax) * vx + (py - ay) * vy) / seg2, 0.0), 1.0)
        qx, qy = ax + t * vx, ay + t * vy
        dd = (px - qx) ** 2 + (py - qy) ** 2
        if dd < best_d2:
            best_d2 = dd
            best_s = (a + t) * ds
    return float(np.mod(best_s, track.total_length))


def contouring_lag_errors(track: Track, point, s_ref: float) -> ContouringErrors:
    """Tangential (lag) and normal (contouring) components of the offset.

    ``e_lag = -t . d`` and ``e_cont = n . d`` with ``d = point - centerline(s_ref)``
    and ``n`` the left normal.
    """
    r = track.position(s_ref)
    th = track.tangent_angle(s_ref)
    c, s = np.cos(th), np.sin(th)
    dx = float(point[0]) - r[0]
    dy = float(point[1]) - r[1]
    return ContouringErrors(e_lag=float(-(c * dx + s * dy)), e_cont=float(-s * dx + c * dy))


def boundary_margin(track: Track, point, s: float) -> float:
    """Distance to the nearer boundary; negative outside the track."""
    return track.half_width(s) - abs(contouring_lag_errors(track, point, s).e_cont)


def unwrap_progress(track: Track, s_prev: float, s_new: float) -> float:
    """Smallest signed progress increment from ``s_prev`` to ``s_new``."""
    L = track.total_length
    d = np.mod(s_new - s_prev + 0.5 * L, L) - 0.5 * L
    return float(d)
