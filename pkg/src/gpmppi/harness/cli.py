"""Command-line entry point: ``gpmppi {train,track,avoid,bench,quantiles}``."""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from ..dynamics import Edd5Params
from ..gp import KernelParams, fit
from ..uncertainty import chi2_quantile_2dof, normal_quantile
from .bench import benchmark_suite, results_csv, trace_csv
from .config import PLANNERS, ConfigError, ExperimentConfig, load_config
from .experiments import (ScenarioError, TrainedModels, avoidance_scenario, run_avoidance_experiment,
                          run_tracking_experiment, tracking_scenario, train_models)


class CliError(Exception):
    pass


def save_models(models: TrainedModels, path: str | Path) -> None:
    gp = models.gp
    np.savez(path, inputs=gp.inputs, outputs=gp.outputs, kernels=np.stack([k.as_array() for k in gp.kernels]),
             edd5=models.edd5.as_array(), track_width=np.array(models.track_width))


def load_models(path: str | Path) -> TrainedModels:
    with np.load(path) as f:
        gp = fit(f["inputs"], f["outputs"], [KernelParams.from_array(r) for r in f["kernels"]])
        e = f["edd5"]
        return TrainedModels(gp, Edd5Params(*map(float, e)), float(f["track_width"]))


def _write(text: str, out: str | None) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    if getattr(args, "planner", None) is not None:
        cfg = cfg.replace(planner=args.planner)
    if getattr(args, "workers", None) is not None:
        cfg = cfg.replace(mppi=dataclasses.replace(cfg.mppi, workers=args.workers))
    return cfg


def _models(args, cfg) -> TrainedModels:
    return load_models(args.models) if getattr(args, "models", None) else train_models(cfg)


def cmd_train(args) -> int:
    cfg = _config(args)
    models = train_models(cfg)
    out = args.out or "models.npz"
    save_models(models, out)
    print(f"saved GP ({models.gp.n} points, {models.gp.n_outputs} outputs) and EDD5 to {out}", file=sys.stderr)
    return 0


def _run_single(args, kind: str) -> int:
    cfg = _config(args)
    models = _models(args, cfg)
    trace = [] if args.plot_data else None
    if kind == "tracking":
        sc = tracking_scenario(cfg, args.track)
        m = run_tracking_experiment(cfg, sc, models=models, trace=trace)
    else:
        sc = avoidance_scenario(cfg, cfg.seed)
        m = run_avoidance_experiment(cfg, sc, models=models, trace=trace)
    _write(results_csv(cfg, [m]), args.out)
    if trace is not None:
        Path(args.plot_data).write_text(trace_csv(cfg, trace))
    print(f"{kind}: planner={m.planner} ticks={m.ticks} success={m.success} "
          f"latency median {m.latency_ms_median:.1f} ms", file=sys.stderr)
    if m.status.startswith("aborted"):
        raise CliError(m.status)
    return 0


def cmd_track(args) -> int:
    return _run_single(args, "tracking")


def cmd_avoid(args) -> int:
    return _run_single(args, "avoidance")


def cmd_bench(args) -> int:
    cfg = _config(args)

    def progress(m):
        print(f"  {m.planner:8s} {m.scenario:6s} terrain={m.terrain} seed={m.seed} status={m.status}", file=sys.stderr)

    rows, aggs = benchmark_suite(cfg, progress if args.verbose else None)
    _write(results_csv(cfg, rows, aggs), args.out)
    return 0


def _bisect_normal(p: float) -> float:
    from math import erfc, sqrt
    lo, hi = -40.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.5 * erfc(-mid / sqrt(2.0)) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def cmd_quantiles(args) -> int:
    ok = True
    print("p,chi2_2,z,z_bisect,abs_err")
    for p in (0.6, 0.8, 0.9, 0.95, 0.975, 0.99):
        z, zb = normal_quantile(p), _bisect_normal(p)
        err = abs(z - zb)
        ok &= err <= 1e-6
        print(f"{p!r},{chi2_quantile_2dof(p)!r},{z!r},{zb!r},{err:.3e}")
    if not ok:
        raise CliError("normal quantile disagrees with bisection by more than 1e-6")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gpmppi", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, planner=True):
        p.add_argument("--config", help="TOML config file (defaults if omitted)")
        p.add_argument("--seed", type=int, help="trial seed")
        p.add_argument("--out", help="output path ('-' or omitted: stdout)")
        p.add_argument("--workers", type=int, help="rollout worker threads")
        if planner:
            p.add_argument("--planner", choices=PLANNERS)

    p = sub.add_parser("train", help="generate training data, fit GPs and EDD5, save models")
    common(p, planner=False)
    p.set_defaults(func=cmd_train)
    for name, func, helptext in (("track", cmd_track, "one lane-tracking run"),
                                 ("avoid", cmd_avoid, "one obstacle-avoidance run")):
        p = sub.add_parser(name, help=helptext)
        common(p)
        p.add_argument("--models", help="models file written by 'train' (refit from config if omitted)")
        p.add_argument("--plot-data", metavar="CSV", help="write a per-tick trajectory CSV")
        if name == "track":
            p.add_argument("--track", choices=("circle", "square"))
        p.set_defaults(func=func)
    p = sub.add_parser("bench", help="full planner x scenario x seed suite")
    common(p, planner=False)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_bench)
    p = sub.add_parser("quantiles", help="print the quantile table and self-check it")
    p.set_defaults(func=cmd_quantiles)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ConfigError, ScenarioError, OSError, ValueError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"gpmppi {args.command}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
