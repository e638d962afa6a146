import math

import numpy as np
import pytest

from qlyap.cli import main
from qlyap.experiments import (
    ConfigError,
    ExperimentConfig,
    benchmark_controls,
    build_system,
    fresh_param_states,
    load_config,
    log_infidelity_histogram,
    read_csv,
    region_grid,
    write_csv,
)


class TestConfig:
    def test_defaults_are_the_benchmark(self):
        cfg = ExperimentConfig()
        assert cfg.omega2 == 2.0 and cfg.omega3 == 5.0 and cfg.coupling == 0.5
        assert cfg.strength == 1.0 and cfg.t_classification == 20.0
        assert cfg.t_regression == pytest.approx(2 * math.pi)
        assert cfg.goal_index == 3
        assert cfg.p_upper == (10.0, 20.0)
        assert cfg.restarts == 8

    def test_paper_scale_restores_published_sizes(self):
        cfg = ExperimentConfig().paper_scale()
        assert cfg.class_app == 50_000
        assert 40_000 in cfg.table1_sizes
        assert cfg.region_resolution == 500
        assert cfg.reg_train == 100_000
        assert cfg.table2_sizes[-1] == 100_000
        assert cfg.max_iters == 100_000

    def test_checksum_stable_and_sensitive(self):
        a = ExperimentConfig()
        b = ExperimentConfig()
        assert a.checksum() == b.checksum()
        c = ExperimentConfig(seed=8)
        assert a.checksum() != c.checksum()

    def test_file_roundtrip(self, tmp_path):
        cfg = ExperimentConfig(seed=123, class_train=55, table1_sizes=(5, 10))
        path = tmp_path / "exp.cfg"
        path.write_text(cfg.to_text())
        loaded = load_config(path)
        assert loaded == cfg

    def test_partial_file_with_comments(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("# comment\nseed = 5\ntable1_sizes = 10,20\nomega2 = 2.5\n")
        cfg = load_config(path)
        assert cfg.seed == 5 and cfg.table1_sizes == (10, 20) and cfg.omega2 == 2.5

    def test_bad_key_and_value(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("nonsense = 5\n")
        with pytest.raises(ConfigError):
            load_config(path)
        path.write_text("seed = abc\n")
        with pytest.raises(ConfigError):
            load_config(path)
        path.write_text("omega2 = -1\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_overrides(self):
        cfg = load_config(None, {"seed": 99, "outdir": "elsewhere", "threads": 2})
        assert cfg.seed == 99 and cfg.outdir == "elsewhere" and cfg.threads == 2


class TestSystemBuilders:
    def test_classification_system(self):
        system = build_system(ExperimentConfig(), "classification")
        assert system.horizon == 20.0
        assert system.n_controls == 2
        expected = [(3 - math.sqrt(2)) / 2, (3 + math.sqrt(2)) / 2, 5.0]
        assert np.allclose(system.basis.eigenvalues, expected)

    def test_regression_system(self):
        system = build_system(ExperimentConfig(), "regression")
        assert system.horizon == pytest.approx(2 * math.pi)
        assert system.n_controls == 1

    def test_controls_couple_to_the_top_level(self):
        h1, h2 = benchmark_controls()
        assert h1[0, 2] == 1.0 and h1[2, 0] == 1.0 and np.sum(np.abs(h1)) == 2.0
        assert h2[1, 2] == 1.0 and h2[2, 1] == 1.0 and np.sum(np.abs(h2)) == 2.0

    def test_unknown_experiment(self):
        with pytest.raises(ConfigError):
            build_system(ExperimentConfig(), "other")

    def test_fresh_states_deterministic(self):
        system = build_system(ExperimentConfig(), "regression")
        v1, s1 = fresh_param_states(system, 5, 42)
        v2, s2 = fresh_param_states(system, 5, 42)
        assert np.array_equal(v1, v2) and np.array_equal(s1, s2)
        norms = np.linalg.norm(s1, axis=1)
        assert np.allclose(norms, 1.0, atol=1e-12)


class TestCsvHelpers:
    def test_roundtrip(self, tmp_path):
        path = tmp_path / "t.csv"
        rows = [(1, 0.5, -3.25), (2, 1.0 / 3.0, 7.0)]
        write_csv(path, ["a", "b", "c"], rows, header_lines=["config=xyz"])
        cols, data = read_csv(path)
        assert cols == ["a", "b", "c"]
        assert data[0][0] == 1.0
        assert data[1][1] == pytest.approx(1.0 / 3.0, abs=0)

    def test_empty_rejected(self, tmp_path):
        path = tmp_path / "e.csv"
        path.write_text("# only comments\n")
        with pytest.raises(Exception):
            read_csv(path)


def test_region_grid_layout():
    grid = region_grid(5)
    assert grid.shape == (25, 4)
    assert np.all(grid[:, 2:] == 0.0)
    assert grid[0, 0] == 0.0 and grid[-1, 0] == pytest.approx(np.pi / 2)
    # row-major over (theta1, theta2)
    assert np.allclose(grid[:5, 0], 0.0)
    assert grid[1, 1] > grid[0, 1]


def test_log_infidelity_histogram_is_a_density():
    rng = np.random.default_rng(0)
    fids = 1.0 - 10 ** rng.uniform(-8, -1, size=1000)
    dens = log_infidelity_histogram(fids)
    assert np.sum(dens) * 0.25 == pytest.approx(1.0)
    assert np.all(dens >= 0)


class TestCli:
    def test_gen_samples_deterministic_across_threads(self, tmp_path, capsys):
        cfg_file = tmp_path / "tiny.cfg"
        cfg_file.write_text("class_train = 6\n")
        out1 = tmp_path / "run1"
        out2 = tmp_path / "run2"
        rc = main(["gen-samples", "--kind", "classification", "--count", "6",
                   "--config", str(cfg_file), "--out", str(out1),
                   "--name", "t.samples", "--seed", "3"])
        assert rc == 0
        rc = main(["gen-samples", "--kind", "classification", "--count", "6",
                   "--config", str(cfg_file), "--out", str(out2),
                   "--name", "t.samples", "--seed", "3", "--threads", "3"])
        assert rc == 0
        assert (out1 / "t.samples").read_bytes() == (out2 / "t.samples").read_bytes()
        header = capsys.readouterr().out
        assert "# config=" in header

    def test_paper_scale_flag(self, tmp_path, capsys):
        out = tmp_path / "out"
        rc = main(["gen-samples", "--kind", "classification", "--count", "4",
                   "--out", str(out), "--name", "t.samples", "--seed", "3",
                   "--paper-scale"])
        assert rc == 0
        assert (out / "t.samples").exists()
        capsys.readouterr()

    def test_missing_config_file_is_config_error(self, tmp_path):
        rc = main(["table1", "--config", str(tmp_path / "nope.cfg")])
        assert rc == 2

    def test_bad_config_value_is_config_error(self, tmp_path):
        cfg_file = tmp_path / "bad.cfg"
        cfg_file.write_text("omega2 = -3\n")
        rc = main(["table1", "--config", str(cfg_file)])
        assert rc == 2

    def test_train_and_classify_pipeline(self, tmp_path, capsys):
        cfg_file = tmp_path / "tiny.cfg"
        cfg_file.write_text(
            "class_train = 40\nclass_test = 20\nclass_app = 20\n"
            "max_iters = 300\neval_every = 30\nregion_resolution = 5\nseed = 3\n")
        out = tmp_path / "out"
        rc = main(["gen-samples", "--kind", "classification", "--count", "40",
                   "--config", str(cfg_file), "--out", str(out), "--name", "train.samples"])
        assert rc == 0
        # the test corpus reuses the generator with a different seed
        rc = main(["gen-samples", "--kind", "classification", "--count", "20",
                   "--config", str(cfg_file), "--out", str(out), "--name", "test.samples",
                   "--seed", "4"])
        assert rc == 0
        rc = main(["train-mlp", "--train", str(out / "train.samples"),
                   "--test", str(out / "test.samples"),
                   "--config", str(cfg_file), "--out", str(out)])
        assert rc == 0
        assert (out / "mlp_model.json").exists()
        cols, rows = read_csv(out / "mlp_history.csv")
        assert cols == ["iteration", "train_mse", "test_mse", "train_rate", "test_rate"]
        assert len(rows) >= 10
        rc = main(["region-map", "--model", str(out / "mlp_model.json"),
                   "--config", str(cfg_file), "--out", str(out)])
        assert rc == 0
        cols, rows = read_csv(out / "region_map.csv")
        assert len(rows) == 25
        capsys.readouterr()

    def test_table1_tiny(self, tmp_path, capsys):
        cfg_file = tmp_path / "tiny.cfg"
        cfg_file.write_text(
            "class_train = 12\nclass_test = 8\nclass_app = 8\ntable1_sizes = 6,12\n"
            "max_iters = 120\neval_every = 20\nseed = 5\n")
        out = tmp_path / "out"
        rc = main(["table1", "--config", str(cfg_file), "--out", str(out)])
        assert rc == 0
        cols, rows = read_csv(out / "table1.csv")
        assert cols == ["n_train", "n_test", "test_mse", "iterations", "r_app"]
        assert [r[0] for r in rows] == [6.0, 12.0]
        assert all(0.0 <= r[4] <= 1.0 for r in rows)
        capsys.readouterr()

    def test_table1_regenerates_for_larger_rows(self, tmp_path, capsys):
        # a table row may exceed the default corpus; it is regrown seamlessly
        from qlyap.experiments import run_table1

        cfg = ExperimentConfig(class_train=5, class_test=6, class_app=6,
                               table1_sizes=(4, 9), max_iters=80, eval_every=20,
                               seed=6)
        rows, nets = run_table1(cfg)
        assert [r[0] for r in rows] == [4, 9]
        assert set(nets) == {4, 9}
        capsys.readouterr()

    def test_regression_pipeline(self, tmp_path, capsys):
        cfg_file = tmp_path / "tiny.cfg"
        cfg_file.write_text(
            "reg_train = 5\nreg_validation = 6\nreg_app = 8\nrestarts = 2\n"
            "table2_sizes = 4\nsigma_grid_points = 5\npind_validation = 6\nseed = 3\n")
        out = tmp_path / "out"
        rc = main(["gen-samples", "--kind", "regression", "--count", "5",
                   "--config", str(cfg_file), "--out", str(out), "--name", "reg.samples"])
        assert rc == 0
        rc = main(["tune-grnn", "--train", str(out / "reg.samples"),
                   "--config", str(cfg_file), "--out", str(out)])
        assert rc == 0
        cols, rows = read_csv(out / "sigma_curve.csv")
        assert cols == ["sigma", "sigma_over_d", "eps"] and len(rows) == 5
        rc = main(["table2", "--train", str(out / "reg.samples"),
                   "--config", str(cfg_file), "--out", str(out)])
        assert rc == 0
        cols, rows = read_csv(out / "table2.csv")
        assert cols == ["n_train", "sigma_over_d", "eps", "r_app", "r_train"]
        assert rows[0][0] == 4.0
        rc = main(["baseline-pind", "--config", str(cfg_file), "--out", str(out)])
        assert rc == 0
        cols, rows = read_csv(out / "baselines.csv")
        assert len(rows) == 2
        rc = main(["infidelity-dist", "--model", str(out / "grnn_model.json"),
                   "--train", str(out / "reg.samples"), "--pind", "0.76,3.68",
                   "--config", str(cfg_file), "--out", str(out)])
        assert rc == 0
        cols, rows = read_csv(out / "infidelity_dist.csv")
        assert cols[0] == "log10_infidelity" and len(cols) == 5
        capsys.readouterr()

    def test_numeric_failure_exit_code(self, tmp_path, capsys):
        # an absurd feedback gain destabilizes the integrator at default dt
        cfg_file = tmp_path / "unstable.cfg"
        cfg_file.write_text("strength = 1e7\npind_validation = 2\nrestarts = 1\nseed = 1\n")
        rc = main(["baseline-pind", "--config", str(cfg_file),
                   "--out", str(tmp_path / "out")])
        assert rc == 3
        capsys.readouterr()

    def test_mismatched_sample_file_is_config_error(self, tmp_path, capsys):
        cfg_file = tmp_path / "tiny.cfg"
        cfg_file.write_text("seed = 3\n")
        out = tmp_path / "out"
        rc = main(["gen-samples", "--kind", "classification", "--count", "6",
                   "--config", str(cfg_file), "--out", str(out), "--name", "c.samples"])
        assert rc == 0
        # a regression command must refuse a classification-system file
        rc = main(["table2", "--train", str(out / "c.samples"),
                   "--config", str(cfg_file), "--out", str(out)])
        assert rc == 2
        capsys.readouterr()
