import math

import numpy as np
import pytest

from gpmppi.costs import Track
from gpmppi.harness import bench, cli, experiments
from gpmppi.harness.config import ConfigError, ExperimentConfig, from_dict, load_config, to_dict
from gpmppi.harness.experiments import (RunMetrics, Scenario, ScenarioError, avoidance_scenario, compute_rmse,
                                        random_obstacle_field, tracking_scenario)

QUICK = "configs/quick.toml"


class TestConfig:
    def test_default_file_equals_defaults(self):
        assert load_config("configs/default.toml") == ExperimentConfig()

    def test_round_trip(self):
        cfg = load_config(QUICK)
        assert from_dict(to_dict(cfg)) == cfg

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_text("[mppi]\nsampels = 10\n")
        with pytest.raises(ConfigError, match="sampels"):
            load_config(p)

    def test_unknown_section_rejected(self, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_text("[mpppi]\nsamples = 10\n")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_invalid_value_rejected(self, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_text("[costs]\np_x = 1.5\n")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_digest_ignores_workers_only(self):
        cfg = ExperimentConfig()
        assert cfg.with_section("mppi", workers=8).digest() == cfg.digest()
        assert cfg.with_section("mppi", samples=512).digest() != cfg.digest()


class TestScenarios:
    def test_rmse_examples(self):
        tr = Track.circle((0, 0), 4.0, 0.5)
        assert compute_rmse([[4.0, 0.0], [0.0, 4.0]], tr) == 0.0
        assert compute_rmse([[4.1, 0.0], [0.0, -4.1]], tr) == pytest.approx(0.1)
        assert compute_rmse([[4.0, 0.0], [4.2, 0.0]], tr) == pytest.approx(math.sqrt(0.02))
        with pytest.raises(ValueError):
            compute_rmse(np.zeros((0, 2)), tr)

    def test_obstacle_field_respects_clearances(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            obs = random_obstacle_field(rng, 5, (0, 10, -2.5, 2.5), (0, 0), (10, 0), 0.5)
            assert len(obs) == 5
            for o in obs:
                assert math.dist(o.center, (0, 0)) >= o.radius + 1.0
                assert math.dist(o.center, (10, 0)) >= o.radius + 1.0
                assert 0.3 <= o.radius <= 0.7

    def test_obstacle_field_impossible(self):
        with pytest.raises(ScenarioError):
            random_obstacle_field(np.random.default_rng(0), 3, (0, 1, 0, 1), (0, 0), (1, 1), 5.0)

    def test_obstacle_count_limits(self):
        with pytest.raises(ValueError):
            random_obstacle_field(np.random.default_rng(0), 6, (0, 10, -2, 2), (0, 0), (10, 0), 0.5)

    def test_avoidance_scenario_deterministic(self):
        cfg = ExperimentConfig()
        assert avoidance_scenario(cfg, 4) == avoidance_scenario(cfg, 4)
        assert 1 <= len(avoidance_scenario(cfg, 4).obstacles) <= 5

    def test_schedule_switch_tick(self):
        sc = tracking_scenario(ExperimentConfig(), "circle", ((0.0, 0), (2.0, 2)))
        assert sc.terrain_at_tick(39, 0.05) == 0 and sc.terrain_at_tick(40, 0.05) == 2

    def test_schedule_validation(self):
        with pytest.raises(ValueError):
            Scenario("tracking", (0, 0, 0), track=Track.circle(), schedule=((1.0, 0),))


class TestBench:
    def test_empty_planner_list(self):
        cfg = ExperimentConfig().with_section("bench", planners=())
        rows, aggs = bench.benchmark_suite(cfg)
        assert rows == [] and aggs == []
        text = bench.results_csv(cfg, rows, aggs)
        lines = text.splitlines()
        assert lines[0].startswith("# gpmppi-results/1 config=") and lines[1].split(",")[0] == "record"
        assert len(lines) == 2

    def test_aggregate_mean_matches_rows(self):
        rows = [RunMetrics("gp", "circle", 0, s, rmse=r) for s, r in enumerate([0.1, 0.2, 0.4])]
        rows += [RunMetrics("gp", "avoid", 1, s, success=s != 1, time_to_goal=5.0 + s if s != 1 else math.nan,
                            collision_count=int(s == 1)) for s in range(3)]
        aggs = {(a.scenario, a.terrain): a for a in bench.aggregate(rows)}
        assert aggs["circle", 0].rmse_mean == pytest.approx(np.mean([0.1, 0.2, 0.4]))
        av = aggs["avoid", 1]
        assert (av.successes, av.collisions) == (2, 1)
        assert av.time_to_goal_mean == pytest.approx(6.0) and av.time_to_goal_std == pytest.approx(1.0)

    def test_csv_float_formatting_is_exact(self):
        assert bench.fmt(0.1) == "0.1" and bench.fmt(math.nan) == "nan" and bench.fmt(True) == "1"


class TestCli:
    def test_quantiles_self_check(self, capsys):
        assert cli.main(["quantiles"]) == 0
        out = capsys.readouterr().out
        assert out.splitlines()[0] == "p,chi2_2,z,z_bisect,abs_err" and len(out.splitlines()) == 7

    def test_missing_config_is_one_line_error(self, capsys):
        assert cli.main(["track", "--config", "/nonexistent.toml"]) != 0
        err = capsys.readouterr().err.strip().splitlines()
        assert len(err) == 1 and err[0].startswith("gpmppi track:")

    def test_bad_config_exit_code(self, tmp_path, capsys):
        p = tmp_path / "bad.toml"
        p.write_text("[bogus]\n")
        assert cli.main(["bench", "--config", str(p)]) != 0

    def test_train_then_track(self, tmp_path):
        models = tmp_path / "m.npz"
        assert cli.main(["train", "--config", QUICK, "--out", str(models)]) == 0
        out, trace = tmp_path / "r.csv", tmp_path / "t.csv"
        rc = cli.main(["track", "--config", QUICK, "--models", str(models), "--seed", "3", "--out", str(out),
                       "--plot-data", str(trace)])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("# gpmppi-results/1") and len(lines) == 3
        row = dict(zip(lines[1].split(","), lines[2].split(",")))
        assert row["planner"] == "gp" and float(row["distance"]) >= 8.0 and row["status"] == "ok"
        assert trace.read_text().splitlines()[1].startswith("tick,t,x,y")

    def test_loaded_models_match_fresh_training(self, tmp_path):
        cfg = load_config(QUICK)
        fresh = experiments.train_models(cfg)
        cli.save_models(fresh, tmp_path / "m.npz")
        loaded = cli.load_models(tmp_path / "m.npz")
        q = np.random.default_rng(0).normal(size=(10, 4))
        from gpmppi.gp import predict_batch
        assert predict_batch(fresh.gp, q)[0].tobytes() == predict_batch(loaded.gp, q)[0].tobytes()
        assert loaded.edd5 == fresh.edd5
