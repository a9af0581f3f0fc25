"""Time the hot kernels under the numba and pure-numpy backends.

Usage::

    python benchmarks/bench_kernels.py            # runs both backends
    python benchmarks/bench_kernels.py --child    # one backend, set by RACETUNE_NUMBA
"""

from __future__ import annotations

import json
import os
import subprocess
import sys
import timeit


def child() -> dict:
    import numpy as np

    from racetune import _accel
    from racetune.harness import Environment
    from racetune.kernels import dynamics as kd
    from racetune.mpcc import MpccController

    env = Environment.from_config()
    p = env.nominal.to_vector()
    x = np.array([0.3, -0.2, 0.4, 1.8, 0.12, 2.5])
    u = np.array([0.1, 0.4])
    coef = np.zeros((2, 2))
    dt = env.config.simulation.dt
    kd.model_step_jacobian(x, u, p, dt, 2, coef)
    ctl = MpccController(env.nominal, env.track, env.mpcc_config())
    w = env.default_weights()
    ctl.step_closed_loop(x, w)  # warm-up, includes compilation

    out = {"backend": _accel.backend()}
    n = 2000
    out["model_step_us"] = 1e6 * timeit.timeit(
        lambda: kd.model_step(x, u, p, dt, 2, coef), number=n) / n
    out["model_jacobian_us"] = 1e6 * timeit.timeit(
        lambda: kd.model_step_jacobian(x, u, p, dt, 2, coef), number=n) / n
    n = 20
    out["mpcc_step_ms"] = 1e3 * timeit.timeit(
        lambda: ctl.step_closed_loop(x, w), number=n) / n
    return out


def main() -> None:
    if "--child" in sys.argv:
        print(json.dumps(child()))
        return
    rows = []
    for flag in ("1", "0"):
        env = dict(os.environ, RACETUNE_NUMBA=flag)
        res = subprocess.run([sys.executable, __file__, "--child"], env=env,
                             capture_output=True, text=True, check=True)
        rows.append(json.loads(res.stdout.strip().splitlines()[-1]))
    keys = [k for k in rows[0] if k != "backend"]
    print(f"{'kernel':<20}" + "".join(f"{r['backend']:>12}" for r in rows) + f"{'speedup':>10}")
    for k in keys:
        print(f"{k:<20}" + "".join(f"{r[k]:12.2f}" for r in rows)
              + f"{rows[1][k] / rows[0][k]:10.1f}")


if __name__ == "__main__":
    main()
