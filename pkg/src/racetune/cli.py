"""Command-line entry point.

Every run writes its CSV files plus ``manifest.txt`` into ``--out``.  The
manifest records the command, seed, scenario and the SHA-256 of config and
track; ``--manifest`` replays a previous run with the same arguments.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from pathlib import Path

from . import __version__
from ._accel import backend
from .config import ConfigError, load_config

COMMANDS = ("simulate", "table1", "fig4", "fig5", "fig6", "fig7", "tune")
MANIFEST = "manifest.txt"
MAX_SEED = 2 ** 64


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < MAX_SEED:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="racetune", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "drive laps and write telemetry",
        "table1": "one-step prediction errors: nominal vs GP vs BLR",
        "fig4": "three controller settings on a mismatched car",
        "fig5": "objective response surface over the weight box",
        "fig6": "per-lap context vectors for all scenarios",
        "fig7": "contextual vs standard tuning learning curves",
        "tune": "a single tuning run",
    }
    for name in COMMANDS:
        s = sub.add_parser(name, help=helps[name])
        s.add_argument("--config", help="INI config (default: shipped defaults)")
        s.add_argument("--track", help="track CSV (default: config or demo track)")
        s.add_argument("--scenario", help="scenario name from the config")
        s.add_argument("--seed", type=_seed, default=0)
        s.add_argument("--out", default="results", help="output directory")
        s.add_argument("--mode", choices=("standard", "contextual"), default="contextual")
        s.add_argument("--iters", type=_positive, help="laps / iterations (command specific)")
        s.add_argument("--manifest", help="replay the arguments stored in a manifest")
    return p


def read_manifest(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def _apply_manifest(args, parser) -> None:
    try:
        m = read_manifest(args.manifest)
    except OSError as exc:
        parser.error(f"cannot read manifest: {exc}")
    if m.get("command") != args.command:
        parser.error(f"manifest is for {m.get('command')!r}, not {args.command!r}")
    for key in ("config", "track", "scenario", "mode"):
        if m.get(key):
            setattr(args, key, m[key])
    args.seed = int(m.get("seed", args.seed))
    if m.get("iters"):
        args.iters = int(m["iters"])


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, args, config, track_path) -> None:
    lines = [
        f"command = {args.command}",
        f"version = {__version__}",
        f"backend = {backend()}",
        f"config = {args.config or ''}",
        f"config_sha256 = {config.digest}",
        f"track = {args.track or ''}",
        f"track_sha256 = {_sha256(track_path)}",
        f"scenario = {args.scenario or ''}",
        f"seed = {args.seed}",
        f"mode = {args.mode}",
        f"iters = {'' if args.iters is None else args.iters}",
    ]
    (out / MANIFEST).write_text("\n".join(lines) + "\n")


def _run(args, env, out: Path) -> str:
    from . import experiments as ex
    from .harness import Session, write_telemetry

    cfg = env.config
    if args.command == "simulate":
        sc = args.scenario or "car1"
        n = 3 if args.iters is None else args.iters
        sess = Session(env, sc, args.seed)
        w = env.default_weights()
        laps = [sess.drive_lap(w) for _ in range(n)]
        write_telemetry(out / "telemetry.csv", laps)
        ex._write_csv(out / "laps.csv",
                      ["lap", "lap_time", "mean_deviation_cm", "boundary_violations", "completed",
                       "abort_reason"],
                      [[i, l.lap_time, l.mean_deviation_cm, l.boundary_violations, l.completed,
                        l.abort_reason] for i, l in enumerate(laps)])
        return f"{n} laps on {sc}: " + ", ".join(f"{l.lap_time:.2f}s" for l in laps)
    if args.command == "table1":
        sc = args.scenario or "car2"
        res = ex.experiment_model_learning(env, sc, args.seed, resamples=args.iters, out=out)
        lines = [f"{k:8s} vy {m[0]:.2f}+-{s[0]:.2f} cm/s  omega {m[1]:.3f}+-{s[1]:.3f} rad/s"
                 for k, (m, s) in res.summary().items()]
        return "\n".join(lines)
    if args.command == "fig4":
        sc = args.scenario or "car2"
        res = ex.experiment_three_settings(env, sc, args.seed, n_laps=args.iters, out=out)
        return "\n".join(f"{k:16s} lap {res.mean_lap_time(k):.3f}s  dev {res.mean_deviation(k):.2f}cm"
                         for k in ex.SETTINGS)
    if args.command == "fig5":
        sc = args.scenario or "car1"
        res = ex.experiment_response_surface(env, sc, args.seed, n_ucb=args.iters, out=out)
        return f"argmin q_cont={res.argmin_weights[0]:.3g} q_adv={res.argmin_weights[1]:.3g}"
    if args.command == "fig6":
        scs = [args.scenario] if args.scenario else None
        res = ex.experiment_context_clusters(env, scs, args.seed, n_laps=args.iters, out=out)
        return f"separation ratio {res.separation_ratio():.2f}"
    if args.command == "fig7":
        seeds = [args.seed + i for i in range(cfg.experiments.fig7_seeds)]
        ex.experiment_contextual_vs_standard(env, None, seeds, args.iters, out=out)
        return f"wrote {out / 'fig7_history.csv'}"
    if args.command == "tune":
        sc = args.scenario or "car1"
        n = cfg.experiments.fig7_iters if args.iters is None else args.iters
        recs = ex.tune(env, sc, args.mode, n, args.seed)
        ex._write_csv(out / "bo_history.csv", ex.HISTORY_COLUMNS, ex.history_rows(recs, args.seed))
        best = min(recs, key=lambda r: r.J) if recs else None
        return "no iterations" if best is None else \
            f"best J={best.J:.3f} at q_cont={best.q_cont:.3g} q_adv={best.q_adv:.3g}"
    raise AssertionError(args.command)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.manifest:
        _apply_manifest(args, parser)
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        parser.error(str(exc))
    if args.scenario and args.scenario not in config.scenario_names:
        parser.error(f"unknown scenario {args.scenario!r}; choose from "
                     + ", ".join(config.scenario_names))
    from .harness import Environment

    track_path = Path(args.track) if args.track else config.track_path()
    if not track_path.exists():
        parser.error(f"track file not found: {track_path}")
    out = Path(args.out)
    try:
        env = Environment.from_config(config, track_path)
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(out, args, config, track_path)
        msg = _run(args, env, out)
    except Exception as exc:  # runtime failures map to exit code 1
        print(f"racetune {args.command}: error: {exc}", file=sys.stderr)
        return 1
    print(msg)
    return 0


if __name__ == "__main__":
    sys.exit(main())
