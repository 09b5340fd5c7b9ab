"""Benchmark suite and CSV output.

CSV files start with a ``#`` comment line naming the schema version and the
config digest. Floats are written with ``repr`` precision so reruns can be
compared byte for byte. Wall-clock latency is reported by the CLI on stderr,
never in the files, since it differs between otherwise identical runs.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .config import ExperimentConfig
from .experiments import (RunMetrics, TickRecord, avoidance_scenario, run_avoidance_experiment,
                          run_tracking_experiment, tracking_scenario, train_models)

SCHEMA = "gpmppi-results/1"
TRACE_SCHEMA = "gpmppi-trace/1"

RUN_FIELDS = ("record", "planner", "scenario", "terrain", "seed", "rmse", "success", "time_to_goal",
              "min_obstacle_clearance", "mean_speed", "collision_count", "lane_keeping", "distance", "ticks", "status")
AGG_FIELDS = ("record", "planner", "scenario", "terrain", "runs", "rmse_mean", "success", "successes",
              "time_to_goal_mean", "time_to_goal_std", "collisions")


def fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def metrics_row(m: RunMetrics) -> list[str]:
    return [fmt(x) for x in ("run", m.planner, m.scenario, m.terrain, m.seed, m.rmse, m.success, m.time_to_goal,
                             m.min_obstacle_clearance, m.mean_speed, m.collision_count, m.lane_keeping,
                             m.distance, m.ticks, m.status)]


@dataclass(frozen=True)
class Aggregate:
    planner: str
    scenario: str
    terrain: int
    runs: int
    rmse_mean: float
    successes: int
    time_to_goal_mean: float
    time_to_goal_std: float
    collisions: int

    def row(self) -> list[str]:
        return [fmt(x) for x in ("aggregate", self.planner, self.scenario, self.terrain, self.runs, self.rmse_mean,
                                 f"{self.successes}/{self.runs}", self.successes, self.time_to_goal_mean,
                                 self.time_to_goal_std, self.collisions)]


def aggregate(rows: Sequence[RunMetrics]) -> list[Aggregate]:
    """One aggregate per (planner, scenario, terrain), in sorted order."""
    groups: dict[tuple, list[RunMetrics]] = {}
    for m in rows:
        groups.setdefault((m.planner, m.scenario, m.terrain), []).append(m)
    out = []
    for key in sorted(groups):
        ms = groups[key]
        rm = [m.rmse for m in ms if not math.isnan(m.rmse)]
        ttg = [m.time_to_goal for m in ms if m.success and not math.isnan(m.time_to_goal)]
        out.append(Aggregate(
            *key, len(ms),
            float(np.mean(rm)) if rm else math.nan,
            sum(m.success for m in ms),
            float(np.mean(ttg)) if ttg else math.nan,
            float(np.std(ttg)) if ttg else math.nan,
            sum(m.collision_count for m in ms),
        ))
    return out


def benchmark_suite(cfg: ExperimentConfig, progress=None) -> tuple[list[RunMetrics], list[Aggregate]]:
    """Run every (planner, scenario, terrain, seed) combination listed in ``cfg.bench``.

    Tracking runs cover each listed track on each listed terrain. Avoidance
    trials are split as evenly as possible across the listed terrains, with
    the remainder going to the last ones (100 over three gives 33/33/34).
    A run that raises is recorded with its error and the suite continues.
    """
    b = cfg.bench
    rows: list[RunMetrics] = []
    if not b.planners:
        return rows, []
    models = train_models(cfg)
    jobs = []
    for planner in b.planners:
        for shape in b.tracks:
            for terrain in b.terrains:
                for seed in b.tracking_seeds:
                    jobs.append(("tracking", planner, shape, terrain, seed))
        T = len(b.terrains)
        if b.avoidance_trials and T:
            base, extra = divmod(b.avoidance_trials, T)
            seed = 0
            for i, terrain in enumerate(b.terrains):
                for _ in range(base + (1 if i >= T - extra else 0)):
                    jobs.append(("avoidance", planner, "avoid", terrain, seed))
                    seed += 1
    for kind, planner, shape, terrain, seed in jobs:
        try:
            if kind == "tracking":
                sc = tracking_scenario(cfg, shape, ((0.0, terrain),))
                m = run_tracking_experiment(cfg, sc, seed=seed, planner=planner, models=models)
            else:
                sc = avoidance_scenario(cfg, seed, terrain)
                m = run_avoidance_experiment(cfg, sc, seed=seed, planner=planner, models=models)
        except Exception as exc:  # recorded per row, suite continues
            m = RunMetrics(planner, shape, terrain, seed, status=f"error: {type(exc).__name__}: {exc}")
        rows.append(m)
        if progress:
            progress(m)
    rows.sort(key=lambda m: (m.planner, m.scenario, m.terrain, m.seed))
    return rows, aggregate(rows)


def header_line(cfg: ExperimentConfig, schema: str = SCHEMA) -> str:
    return f"# {schema} config={cfg.digest()}\n"


def results_csv(cfg: ExperimentConfig, rows: Iterable[RunMetrics], aggregates: Iterable[Aggregate] = ()) -> str:
    buf = io.StringIO()
    buf.write(header_line(cfg))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RUN_FIELDS)
    for m in rows:
        w.writerow(metrics_row(m))
    aggregates = list(aggregates)
    if aggregates:
        w.writerow(AGG_FIELDS)
        for a in aggregates:
            w.writerow(a.row())
    return buf.getvalue()


def trace_csv(cfg: ExperimentConfig, trace: Sequence[TickRecord]) -> str:
    buf = io.StringIO()
    buf.write(header_line(cfg, TRACE_SCHEMA))
    w = csv.writer(buf, lineterminator="\n")
    M = len(trace[0].weights) if trace else len(cfg.terrains)
    w.writerow(["tick", "t", "x", "y", "theta", "v", "omega", "v_ref", "omega_ref", "terrain",
                *[f"w{i}" for i in range(M)], "best_cost", "ess", "min_threshold"])
    for r in trace:
        s = r.state
        w.writerow([fmt(x) for x in (r.tick, r.t, s.X, s.Y, s.theta, s.v, s.omega, r.command.v_ref,
                                     r.command.omega_ref, r.terrain, *r.weights, r.best_cost, r.ess, r.min_threshold)])
    return buf.getvalue()
