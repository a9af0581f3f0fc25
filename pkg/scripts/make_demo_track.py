"""Regenerate ``src/racetune/data/demo_track.csv``.

The centerline is a periodic cubic spline through hand-placed control
points (counter-clockwise, start line on the bottom straight).
"""

from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from racetune.track import save_track

CONTROL_POINTS = np.array([
    [0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [2.9, 0.1], [3.35, 0.6],
    [3.2, 1.3], [2.6, 1.55], [2.0, 1.25], [1.45, 1.05], [0.9, 1.35],
    [0.3, 1.75], [-0.45, 1.6], [-0.85, 1.0], [-0.75, 0.35],
])
HALF_WIDTH = 0.18
SPACING = 0.05


def main(out: Path) -> None:
    pts = np.vstack([CONTROL_POINTS, CONTROL_POINTS[:1]])
    chord = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))])
    spline = CubicSpline(chord, pts, bc_type="periodic")
    fine = np.linspace(0.0, chord[-1], 20001)
    xy = spline(fine)
    arc = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(xy, axis=0).T))])
    n = int(round(arc[-1] / SPACING))
    s = np.linspace(0.0, arc[-1], n, endpoint=False)
    way = np.column_stack([np.interp(s, arc, xy[:, 0]), np.interp(s, arc, xy[:, 1])])
    save_track(out, way, HALF_WIDTH, HALF_WIDTH)


if __name__ == "__main__":
    main(Path(__file__).resolve().parents[1] / "src" / "racetune" / "data" / "demo_track.csv")
