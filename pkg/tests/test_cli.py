import json

import numpy as np
import pytest

from abscov.cli import ConfigError, ExperimentConfig, main
from abscov.env import Environment

DESK = {
    "env": {"seed": 3, "d": 1000.0, "dw": 62.5, "l": 30,
            "height_range": [30.0, 89.0], "hp": 60.0, "hq": 1.0},
    "channel": {"rate_threshold_bps": 3.6e6},
    "time": {"trial_s": 20.0, "period_s": 10.0},
    "search": {"n_iters": 4, "n_per_iter": 16, "rim": 2, "top_k": 4,
               "nm_mutations": 8},
    "grid_k": 16,
    "n_abs": 2,
    "n_gu": 16,
    "planner": "nm",
    "seeds": [11, 12],
    "collect": {"strategy": "cRandom", "n_trials": 1},
}


def write_config(tmp_path, extra=None, name="config.json"):
    doc = json.loads(json.dumps(DESK))
    if extra:
        for key, val in extra.items():
            if isinstance(val, dict):
                doc.setdefault(key, {}).update(val)
            else:
                doc[key] = val
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


class TestConfigValidation:
    def test_defaults_fill_in(self):
        cfg = ExperimentConfig({})
        assert cfg.doc["n_abs"] == 5
        assert cfg.time.n_steps == 400

    def test_bad_planner_field_path(self):
        with pytest.raises(ConfigError, match="planner"):
            ExperimentConfig({"planner": "magic"})

    def test_bad_lattice(self):
        with pytest.raises(ConfigError, match="env.l"):
            ExperimentConfig({"env": {"l": 2000}})

    def test_bad_time(self):
        with pytest.raises(ConfigError, match="time"):
            ExperimentConfig({"time": {"trial_s": 201.0}})

    def test_bad_capacity(self):
        with pytest.raises(ConfigError, match="epsilon"):
            ExperimentConfig({"n_abs": 3, "n_gu": 100, "epsilon": 0.0})


class TestGenEnv:
    def test_writes_environment(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        out = tmp_path / "env.json"
        assert main(["gen-env", "--config", cfg, "--out", str(out)]) == 0
        env = Environment.from_json(out.read_text())
        assert env.n_buildings == 30

    def test_zero_buildings(self, tmp_path):
        cfg = write_config(tmp_path, {"env": {"l": 0}})
        out = tmp_path / "env.json"
        assert main(["gen-env", "--config", cfg, "--out", str(out)]) == 0
        assert Environment.from_json(out.read_text()).n_buildings == 0

    def test_same_seed_identical(self, tmp_path):
        cfg = write_config(tmp_path)
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        main(["gen-env", "--config", cfg, "--out", str(a)])
        main(["gen-env", "--config", cfg, "--out", str(b)])
        assert a.read_text() == b.read_text()

    def test_invalid_config_exit_code(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"planner": "nope"}))
        assert main(["gen-env", "--config", str(path),
                     "--out", str(tmp_path / "x.json")]) == 1

    def test_missing_config_is_io_error(self, tmp_path):
        assert main(["gen-env", "--config", str(tmp_path / "none.json"),
                     "--out", str(tmp_path / "x.json")]) == 2


class TestCollect:
    def test_line_count_and_manifest(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "data.jsonl"
        assert main(["collect", "--config", cfg, "--out", str(out)]) == 0
        lines = [l for l in out.read_text().splitlines() if l.strip()]
        manifest = json.loads((tmp_path / "data.jsonl.manifest.json").read_text())
        assert manifest["count"] == len(lines) == 40  # one trial of 40 steps

    def test_zero_trials_empty_file_with_manifest(self, tmp_path):
        cfg = write_config(tmp_path, {"collect": {"n_trials": 0}})
        out = tmp_path / "data.jsonl"
        assert main(["collect", "--config", cfg, "--out", str(out)]) == 0
        assert out.read_text() == ""
        manifest = json.loads((tmp_path / "data.jsonl.manifest.json").read_text())
        assert manifest["count"] == 0


class TestRunTrial:
    def test_static_baseline(self, tmp_path):
        cfg = write_config(tmp_path, {"planner": "static"})
        out = tmp_path / "trial.json"
        assert main(["run-trial", "--config", cfg, "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert len(doc["step_cr"]) == 40
        assert 0.0 <= doc["acr"] <= 1.0

    def test_repeated_seed_identical(self, tmp_path):
        cfg = write_config(tmp_path)
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        main(["run-trial", "--config", cfg, "--out", str(a), "--seed", "5"])
        main(["run-trial", "--config", cfg, "--out", str(b), "--seed", "5"])
        da, db = json.loads(a.read_text()), json.loads(b.read_text())
        da.pop("plan_times_s"), db.pop("plan_times_s")  # wall clock
        assert da == db

    def test_csv_export(self, tmp_path):
        cfg = write_config(tmp_path, {"planner": "static"})
        out, csv = tmp_path / "t.json", tmp_path / "t.csv"
        main(["run-trial", "--config", cfg, "--out", str(out),
              "--csv", str(csv)])
        lines = csv.read_text().strip().splitlines()
        assert lines[0] == "step,cr" and len(lines) == 41

    def test_ges_bound_guard_exit_code(self, tmp_path):
        # 64-cell grid: search radius 9, (2*9+1)^10 blows the guard
        cfg = write_config(tmp_path, {"planner": "ges-bound", "n_abs": 5,
                                      "n_gu": 40, "grid_k": 64,
                                      "channel": {"rate_threshold_bps": 8.3e5}})
        assert main(["run-trial", "--config", cfg,
                     "--out", str(tmp_path / "x.json")]) == 3


class TestCompare:
    def test_single_scheme_single_trial(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "cmp"
        assert main(["compare", "--config", cfg, "--schemes", "nm",
                     "--n-trials", "1", "--out", str(out)]) == 0
        rows = (out / "acr_table.csv").read_text().strip().splitlines()
        assert rows[0] == "scheme,n_trials,mean_acr,std_acr,seed_digest"
        scheme, n, mean, std, digest = rows[1].split(",")
        assert scheme == "nm" and n == "1"
        assert float(std) == 0.0
        series = (out / "stepcr_nm.csv").read_text().strip().splitlines()
        assert len(series) == 41

    def test_matched_seeds_share_digest(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "cmp2"
        main(["compare", "--config", cfg, "--schemes", "static,nm",
              "--n-trials", "2", "--out", str(out)])
        rows = (out / "acr_table.csv").read_text().strip().splitlines()[1:]
        digests = {r.split(",")[-1] for r in rows}
        assert len(digests) == 1

    def test_too_few_seeds(self, tmp_path):
        cfg = write_config(tmp_path)
        assert main(["compare", "--config", cfg, "--schemes", "nm",
                     "--n-trials", "9", "--out", str(tmp_path / "x")]) == 1


class TestPredictorLoading:
    def test_corrupt_weight_file_is_config_error(self, tmp_path):
        bad = tmp_path / "bad.weights"
        bad.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
        cfg = write_config(tmp_path, {"predictor": f"emulator:{bad}"})
        assert main(["run-trial", "--config", cfg,
                     "--out", str(tmp_path / "t.json")]) == 1

    def test_missing_weight_file_is_io_error(self, tmp_path):
        cfg = write_config(tmp_path,
                           {"predictor": f"emulator:{tmp_path}/none.weights"})
        assert main(["run-trial", "--config", cfg,
                     "--out", str(tmp_path / "t.json")]) == 2


class TestNicheHeatmap:
    def test_dump_records(self, tmp_path):
        cfg = write_config(tmp_path, {"planner": "sdl-me"})
        out = tmp_path / "dump.jsonl"
        assert main(["niche-heatmap", "--config", cfg, "--out", str(out),
                     "--periods", "2"]) == 0
        lines = [json.loads(l) for l in out.read_text().splitlines() if l]
        assert lines
        for rec in lines[:20]:
            assert set(rec) == {"period", "seq", "niche", "predicted_cr",
                                "actual_cr"}
            assert 0.0 <= rec["predicted_cr"] <= 1.0
            assert 0.0 <= rec["actual_cr"] <= 1.0
        assert {rec["period"] for rec in lines} == {0, 1}

    def test_zero_budget_empty(self, tmp_path):
        cfg = write_config(tmp_path, {"planner": "sdl-nm",
                                      "search": {"n_iters": 0,
                                                 "n_per_iter": 0}})
        out = tmp_path / "dump.jsonl"
        assert main(["niche-heatmap", "--config", cfg,
                     "--out", str(out)]) == 0
        assert out.read_text() == ""

    def test_static_planner_rejected(self, tmp_path):
        cfg = write_config(tmp_path, {"planner": "static"})
        assert main(["niche-heatmap", "--config", cfg,
                     "--out", str(tmp_path / "d.jsonl")]) == 1

    def test_nm_niches_concentrated_vs_me(self, tmp_path):
        # naive mutation's on-site budget clusters near the base feature;
        # the archive search spans at least three times as many niches
        cfg_nm = write_config(tmp_path, {"planner": "nm", "n_abs": 3,
                                         "n_gu": 24}, name="nm.json")
        cfg_me = write_config(tmp_path, {"planner": "sdl-me", "n_abs": 3,
                                         "n_gu": 24,
                                         "search": {"n_iters": 8,
                                                    "n_per_iter": 32}},
                              name="me.json")
        nm_out = tmp_path / "nm.jsonl"
        me_out = tmp_path / "me.jsonl"
        main(["niche-heatmap", "--config", cfg_nm, "--out", str(nm_out)])
        main(["niche-heatmap", "--config", cfg_me, "--out", str(me_out)])

        def niches(path):
            return {tuple(json.loads(l)["niche"])
                    for l in path.read_text().splitlines() if l}

        assert len(niches(me_out)) >= 3 * len(niches(nm_out))
