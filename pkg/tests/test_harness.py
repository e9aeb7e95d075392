import csv
import json

import numpy as np
import pytest

from emstad.cli import main
from emstad.harness import (
    ConfigError,
    default_workers,
    resolve_config,
    run_experiment,
)
from emstad.montecarlo import derive_trial_rng, map_trials
from emstad.presets import preset_config, preset_names


def _echo_trial(payload, index, rng):
    return (index, payload, float(rng.standard_normal()))


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


class TestTrialRng:
    def test_same_inputs_same_stream(self):
        a = derive_trial_rng(7, 3).standard_normal(64)
        b = derive_trial_rng(7, 3).standard_normal(64)
        assert np.array_equal(a, b)

    def test_adjacent_indices_differ(self):
        a = derive_trial_rng(7, 0).standard_normal(64)
        b = derive_trial_rng(7, 1).standard_normal(64)
        assert not np.array_equal(a, b)

    def test_golden_vector(self):
        # pinned once from this implementation; guards the derivation rule
        draws = derive_trial_rng(42, 7).standard_normal(4)
        expected = [
            -0.22003578082389966,
            -1.1207765416787316,
            -0.13215326644334396,
            -0.27356508306718774,
        ]
        assert np.array_equal(draws, np.array(expected))

    def test_negative_inputs_rejected(self):
        with pytest.raises(ValueError):
            derive_trial_rng(-1, 0)
        with pytest.raises(ValueError):
            derive_trial_rng(0, -1)


class TestMapTrials:
    def test_worker_count_does_not_change_results(self):
        serial = map_trials(_echo_trial, "p", 13, base_seed=5, workers=1)
        parallel = map_trials(_echo_trial, "p", 13, base_seed=5, workers=2)
        assert serial == parallel
        assert [item[0] for item in serial] == list(range(13))

    def test_empty_batch(self):
        assert map_trials(_echo_trial, None, 0, base_seed=1) == []


class TestPresets:
    def test_sixteen_presets(self):
        names = preset_names()
        assert len(names) == 16
        assert "pd_curve_matched" in names and "cfar_rho_mismatched" in names

    def test_preset_config_is_complete(self):
        cfg = preset_config("ccp_matched")
        assert cfg["target_aoas"] == [-16.0, 4.0, 12.0]
        assert cfg["em"]["rho"] == 3.0
        mis = preset_config("ccp_mismatched")
        assert mis["target_aoas"] == [-15.0, 5.0, 12.0]

    def test_unknown_preset(self):
        with pytest.raises(KeyError):
            preset_config("nope_matched")


class TestResolveConfig:
    def test_defaults_for_table_scenario(self):
        cfg = resolve_config({"preset": "pd_curve_matched"})
        assert cfg.k == 24
        assert cfg.interference.n == 8
        assert cfg.grid.k_theta == 21
        assert cfg.target_bins == (6, 13, 16)
        assert cfg.em.max_iters == 4
        assert cfg.pfa == 1e-3
        assert cfg.n_cal_trials == 100000

    def test_overrides_and_em_merge(self):
        cfg = resolve_config(
            {"preset": "pd_curve_matched", "n_trials": 10, "em": {"max_iters": 2}}
        )
        assert cfg.n_trials == 10
        assert cfg.em.max_iters == 2
        assert cfg.em.rho == 3.0  # untouched default survives the merge

    def test_fast_scales_budgets(self):
        cfg = resolve_config({"preset": "pd_curve_matched"}, fast=True)
        assert cfg.n_trials == 100
        assert cfg.n_cal_trials == 10000

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown config keys"):
            resolve_config({"preset": "ccp_matched", "typo_key": 1})

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            resolve_config({"preset": "bogus"})

    def test_missing_sinr_grid(self):
        with pytest.raises(ConfigError, match="sinr_grid"):
            resolve_config({"preset": "ccp_matched", "sinr_grid": []})

    def test_missing_sweep_values(self):
        with pytest.raises(ConfigError, match="sweep_values"):
            resolve_config({"preset": "cfar_rho_matched", "sweep_values": []})

    def test_duplicate_bins(self):
        with pytest.raises(ConfigError, match="distinct"):
            resolve_config(
                {"preset": "ccp_matched", "target_bins": [6, 6, 16]}
            )

    def test_bin_range(self):
        with pytest.raises(ConfigError, match="1..24"):
            resolve_config({"preset": "ccp_matched", "target_bins": [6, 13, 25]})

    def test_pfa_range(self):
        with pytest.raises(ConfigError, match="pfa"):
            resolve_config({"preset": "pd_curve_matched", "pfa": 1.5})

    def test_digest_stable_under_reordering(self):
        a = resolve_config({"preset": "ccp_matched", "n_trials": 7, "base_seed": 9})
        b = resolve_config({"base_seed": 9, "n_trials": 7, "preset": "ccp_matched"})
        assert a.digest() == b.digest()

    def test_digest_changes_with_any_field(self):
        base = resolve_config({"preset": "ccp_matched"})
        for change in (
            {"n_trials": 5},
            {"base_seed": 1},
            {"rho_c": 0.8},
            {"em": {"rho": 4.0}},
            {"sinr_grid": [10.0]},
        ):
            other = resolve_config({"preset": "ccp_matched", **change})
            assert other.digest() != base.digest()


SMOKE = {"k": 12, "n": 4, "target_bins": [2, 7], "target_aoas": [-16.0, 4.0]}


def smoke_config(preset, tmp_path, **extra):
    cfg = {
        "preset": preset,
        **SMOKE,
        "threshold_cache": str(tmp_path / "cache.json"),
        **extra,
    }
    return cfg


class TestRunExperiment:
    def test_snapshot(self, tmp_path):
        out = run_experiment(
            smoke_config("snapshot_matched", tmp_path, sinr_db=25.0),
            out_dir=tmp_path / "out",
        )
        header, rows = read_csv(out / "snapshot.csv")
        assert header == ["bin", "class", "theta_hat_deg", "true_class", "true_theta_deg"]
        assert len(rows) == 12
        assert {row[3] for row in rows} == {"1", "2"}
        manifest = json.loads((out / "manifest.json").read_text())
        assert set(manifest) == {
            "config_digest", "code_version", "preset", "started_utc",
            "finished_utc", "outputs", "seed_rule", "config",
        }
        trajectory = json.loads((out / "trajectory.json").read_text())
        assert trajectory[0]["iteration"] == 1

    def test_ccp_row_structure(self, tmp_path):
        out = run_experiment(
            smoke_config("ccp_matched", tmp_path, sinr_grid=[20.0], n_trials=4),
            out_dir=tmp_path / "out",
        )
        header, rows = read_csv(out / "ccp.csv")
        assert header == ["sinr_db", "bin", "ccp_pct"]
        assert len(rows) == 12
        metrics = json.loads((out / "metrics.json").read_text())
        assert len(metrics) == 1 and metrics[0]["n_trials"] == 4

    def test_pc_outputs(self, tmp_path):
        out = run_experiment(
            smoke_config("pc_matched", tmp_path, sinr_grid=[20.0], n_trials=4),
            out_dir=tmp_path / "out",
        )
        header, rows = read_csv(out / "pc.csv")
        assert header == ["sinr_db", "target_bin", "true_aoa_deg", "pc_pct"]
        assert len(rows) == 2
        header2, rows2 = read_csv(out / "pc_mean.csv")
        assert header2 == ["sinr_db", "pc_mean_pct"]
        assert len(rows2) == 1

    def test_estimation_rows(self, tmp_path):
        out = run_experiment(
            smoke_config(
                "estimation_rms_matched", tmp_path, sinr_grid=[15.0, 25.0], n_trials=3
            ),
            out_dir=tmp_path / "out",
        )
        header, rows = read_csv(out / "estimation_rms.csv")
        assert header == ["sinr_db", "hd_rms", "rmse_aoa_deg", "rmse_count", "n_trials"]
        assert len(rows) == 2

    def test_convergence_rows(self, tmp_path):
        out = run_experiment(
            smoke_config(
                "convergence_matched", tmp_path, sinr_grid=[20.0], n_trials=3
            ),
            out_dir=tmp_path / "out",
        )
        header, rows = read_csv(out / "convergence.csv")
        assert header == [
            "sinr_db", "m", "mean_rel_variation", "mean_rel_objective_variation",
        ]
        assert len(rows) == 6  # max_iters defaults to 6 for this preset

    def test_pd_curve_and_threshold_cache(self, tmp_path):
        cfg = smoke_config(
            "pd_curve_matched", tmp_path,
            sinr_grid=[20.0], n_trials=4, n_cal_trials=8, pfa=0.25,
        )
        out = run_experiment(cfg, out_dir=tmp_path / "out")
        header, rows = read_csv(out / "pd.csv")
        assert header == ["sinr_db", "pd", "n_trials", "eta", "pfa"]
        assert len(rows) == 1
        cache = json.loads((tmp_path / "cache.json").read_text())
        assert len(cache) == 1
        (entry,) = cache.values()
        assert entry["pfa"] == 0.25 and entry["n_trials"] == 8

    def test_cfar_outputs(self, tmp_path):
        cfg = smoke_config(
            "cfar_rho_matched", tmp_path,
            sweep_values=[0.5, 0.9], n_trials=6, n_cal_trials=8, pfa=0.25,
        )
        out = run_experiment(cfg, out_dir=tmp_path / "out")
        header, rows = read_csv(out / "cfar_rho.csv")
        assert header == ["rho_c", "pfa_hat", "n_trials", "eta"]
        assert len(rows) == 2

    def test_bitwise_reproducible_across_workers(self, tmp_path):
        base = smoke_config(
            "pd_curve_matched", tmp_path,
            sinr_grid=[18.0], n_trials=6, n_cal_trials=8, pfa=0.25,
        )
        cfg1 = dict(base, threshold_cache=str(tmp_path / "c1.json"))
        cfg2 = dict(base, threshold_cache=str(tmp_path / "c2.json"))
        out1 = run_experiment(cfg1, out_dir=tmp_path / "o1", workers=1)
        out2 = run_experiment(cfg2, out_dir=tmp_path / "o2", workers=2)
        assert (out1 / "pd.csv").read_bytes() == (out2 / "pd.csv").read_bytes()

    def test_config_from_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(smoke_config("snapshot_matched", tmp_path, sinr_db=20.0)))
        out = run_experiment(path, out_dir=tmp_path / "out")
        assert (out / "snapshot.csv").exists()


class TestCli:
    def test_presets_listing(self, capsys):
        assert main(["presets"]) == 0
        lines = [l for l in capsys.readouterr().out.splitlines() if l.strip()]
        assert len(lines) == 16

    def test_presets_write_to(self, tmp_path, capsys):
        assert main(["presets", "--write-to", str(tmp_path / "configs")]) == 0
        files = sorted((tmp_path / "configs").glob("*.json"))
        assert len(files) == 16
        doc = json.loads(files[0].read_text())
        assert "preset" in doc

    def test_run_snapshot(self, tmp_path, capsys):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(smoke_config("snapshot_matched", tmp_path, sinr_db=20.0)))
        code = main(["run", str(path), "--out", str(tmp_path / "out"), "--workers", "1"])
        assert code == 0
        assert (tmp_path / "out" / "snapshot.csv").exists()

    def test_config_error_exit_code(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"preset": "no_such_thing"}))
        assert main(["run", str(path)]) == 2

    def test_missing_file_exit_code(self, tmp_path, capsys):
        assert main(["run", str(tmp_path / "absent.json")]) == 3

    def test_env_worker_default(self, monkeypatch):
        monkeypatch.setenv("EMSTAD_WORKERS", "3")
        assert default_workers() == 3
        monkeypatch.delenv("EMSTAD_WORKERS")
        assert default_workers() == 1
