"""Command-line interface: subcommand behavior, config-file merging,
exit codes, and agreement with the library calls it wraps."""

import json

import numpy as np
import pytest

from phasefold import cli, rng
from phasefold.baselines import random_sample
from phasefold.bench import make_dataset
from phasefold.data import Dataset, load_dataset, save_dataset
from phasefold.density import load_model, fit_histogram
from phasefold.metrics import distance_criterion
from phasefold.report import load_report
from phasefold.selection import SelectionConfig, predictor_select


@pytest.fixture()
def data_file(tmp_path):
    values, _ = make_dataset("uniform2d", 3, 700)
    path = tmp_path / "data.csv"
    save_dataset(Dataset(values), str(path))
    return path, values


class TestGenerate:
    def test_writes_loadable_dataset(self, tmp_path):
        out = tmp_path / "gen.upsd"
        rc = cli.main([
            "generate", "--generate", "gaussian2d", "--rows", "300",
            "--seed", "9", "--out", str(out),
        ])
        assert rc == 0
        ds = load_dataset(str(out))
        assert ds.values.shape == (300, 2)
        again = tmp_path / "gen2.upsd"
        cli.main([
            "generate", "--generate", "gaussian2d", "--rows", "300",
            "--seed", "9", "--out", str(again),
        ])
        assert np.array_equal(load_dataset(str(again)).values, ds.values)

    def test_unknown_generator_is_usage_error(self, tmp_path):
        rc = cli.main([
            "generate", "--generate", "nope", "--out", str(tmp_path / "x"),
        ])
        assert rc == 2

    def test_missing_out_is_usage_error(self):
        assert cli.main(["generate", "--generate", "normal1d"]) == 2


class TestFit:
    def test_histogram_model_roundtrips(self, data_file, tmp_path):
        path, values = data_file
        out = tmp_path / "model.upsm"
        rc = cli.main([
            "fit", "--input", str(path), "--estimator", "hist",
            "--bins", "6", "--out", str(out),
        ])
        assert rc == 0
        model = load_model(str(out))
        direct = fit_histogram(values, 6)
        probe = values[:50]
        assert np.array_equal(model.log_density(probe), direct.log_density(probe))

    def test_flow_fit_runs(self, data_file, tmp_path):
        path, _ = data_file
        out = tmp_path / "flow.upsm"
        rc = cli.main([
            "fit", "--input", str(path), "--estimator", "flow",
            "--m", "150", "--steps", "10", "--out", str(out),
        ])
        assert rc == 0
        assert load_model(str(out)).log_density(np.zeros((1, 2))).shape == (1,)


class TestSample:
    def test_single_iteration_matches_library_predictor(self, data_file, tmp_path):
        path, values = data_file
        idx_out = tmp_path / "idx.csv"
        rc = cli.main([
            "sample", "--input", str(path), "--n", "40", "--m", "350",
            "--iters", "1", "--estimator", "hist", "--bins", "5",
            "--seed", "21", "--indices-out", str(idx_out),
        ])
        assert rc == 0
        cli_indices = np.loadtxt(idx_out, dtype=np.int64)
        config = SelectionConfig(
            n=40, m=350, iterations=1, estimator="hist", bins=5, seed=21
        )
        result = predictor_select(Dataset(values), config)
        assert np.array_equal(cli_indices, np.sort(result.original_indices))

    def test_outputs_and_report(self, data_file, tmp_path):
        path, values = data_file
        sel = tmp_path / "sel.upsd"
        rep = tmp_path / "report.json"
        rc = cli.main([
            "sample", "--input", str(path), "--n", "30", "--m", "300",
            "--iters", "2", "--estimator", "hist", "--bins", "5",
            "--seed", "4", "--out", str(sel), "--report", str(rep),
        ])
        assert rc == 0
        selected = load_dataset(str(sel)).values
        assert selected.shape == (30, 2)
        report = load_report(str(rep))
        assert report.method == "predictor_corrector"
        assert report.realized_count == 30
        assert report.seed == 4
        assert len(report.iterations) == 2
        assert report.metrics["distance_criterion"] > 0

    def test_missing_n_is_usage_error(self, data_file):
        path, _ = data_file
        assert cli.main(["sample", "--input", str(path)]) == 2

    def test_both_sources_rejected(self, data_file):
        path, _ = data_file
        rc = cli.main([
            "sample", "--input", str(path), "--generate", "normal1d",
            "--n", "10",
        ])
        assert rc == 2

    def test_neither_source_rejected(self):
        assert cli.main(["sample", "--n", "10"]) == 2

    def test_generate_source(self, tmp_path):
        rc = cli.main([
            "sample", "--generate", "uniform2d", "--rows", "500",
            "--n", "25", "--m", "250", "--estimator", "hist",
            "--bins", "5", "--seed", "2",
        ])
        assert rc == 0

    def test_workers_env_default(self, data_file, tmp_path, monkeypatch):
        path, _ = data_file
        outs = []
        for env in ("1", "3"):
            monkeypatch.setenv("PHASEFOLD_WORKERS", env)
            idx_out = tmp_path / f"idx{env}.csv"
            rc = cli.main([
                "sample", "--input", str(path), "--n", "20", "--m", "200",
                "--estimator", "hist", "--bins", "4", "--seed", "8",
                "--indices-out", str(idx_out),
            ])
            assert rc == 0
            outs.append(np.loadtxt(idx_out, dtype=np.int64))
        assert np.array_equal(outs[0], outs[1])


class TestMetric:
    def test_reports_library_value(self, data_file, tmp_path, capsys):
        path, values = data_file
        idx = random_sample(values, 60, 5)
        sel = tmp_path / "sel.csv"
        np.savetxt(sel, idx, fmt="%d")
        rc = cli.main(["metric", "--input", str(path), "--indices", str(sel)])
        assert rc == 0
        out = capsys.readouterr().out
        expected = distance_criterion(values[idx], rescale=True, reference=values)
        assert repr(expected) in out

    def test_ensemble_line(self, data_file, tmp_path, capsys):
        path, values = data_file
        files = []
        for seed in (1, 2, 3):
            idx = random_sample(values, 40, seed)
            p = tmp_path / f"sel{seed}.csv"
            np.savetxt(p, idx, fmt="%d")
            files += ["--indices", str(p)]
        rc = cli.main(["metric", "--input", str(path)] + files)
        assert rc == 0
        out = capsys.readouterr().out
        assert "ensemble: mean" in out
        crits = [
            distance_criterion(
                values[random_sample(values, 40, seed)],
                rescale=True, reference=values,
            )
            for seed in (1, 2, 3)
        ]
        arr = np.array(crits)
        assert repr(float(arr.mean())) in out
        assert repr(float(arr.std(ddof=1))) in out

    def test_nn_distance_csv(self, data_file, tmp_path):
        path, values = data_file
        idx = random_sample(values, 30, 7)
        sel = tmp_path / "sel.csv"
        np.savetxt(sel, idx, fmt="%d")
        nn = tmp_path / "nn.csv"
        rc = cli.main([
            "metric", "--input", str(path), "--indices", str(sel),
            "--out", str(nn),
        ])
        assert rc == 0
        rows = nn.read_text().strip().splitlines()
        assert rows[0] == "nn_distance"
        assert len(rows) - 1 == 30

    def test_whole_input_criterion(self, data_file, capsys):
        path, values = data_file
        rc = cli.main(["metric", "--input", str(path)])
        assert rc == 0
        assert repr(distance_criterion(values, rescale=True)) in capsys.readouterr().out

    def test_out_of_range_index(self, data_file, tmp_path):
        path, _ = data_file
        bad = tmp_path / "bad.csv"
        bad.write_text("0\n5000\n")
        assert cli.main(["metric", "--input", str(path), "--indices", str(bad)]) == 2

    def test_negative_index(self, data_file, tmp_path):
        path, _ = data_file
        bad = tmp_path / "bad.csv"
        bad.write_text("-3\n")
        assert cli.main(["metric", "--input", str(path), "--indices", str(bad)]) == 2

    def test_non_integer_indices(self, data_file, tmp_path):
        path, _ = data_file
        bad = tmp_path / "bad.csv"
        bad.write_text("1.5\n")
        assert cli.main(["metric", "--input", str(path), "--indices", str(bad)]) == 2


class TestBaseline:
    @pytest.mark.parametrize(
        "extra",
        [
            ["--method", "random"],
            ["--method", "stratified", "--clusters", "4"],
            ["--method", "brute_force", "--iters", "5"],
            ["--method", "full_binning", "--bins", "5"],
        ],
    )
    def test_methods_run(self, data_file, tmp_path, extra):
        path, _ = data_file
        out = tmp_path / "sel.upsd"
        rc = cli.main(
            ["baseline", "--input", str(path), "--n", "25", "--seed", "2",
             "--out", str(out)] + extra
        )
        assert rc == 0
        assert load_dataset(str(out)).values.shape[0] == 25

    def test_missing_n(self, data_file):
        path, _ = data_file
        assert cli.main(["baseline", "--input", str(path), "--method", "random"]) == 2

    def test_memory_budget_exit_code(self, tmp_path):
        rc = cli.main([
            "baseline", "--generate", "mixture5d", "--rows", "300",
            "--method", "full_binning", "--bins", "100", "--n", "20",
        ])
        assert rc == 5


class TestConfigFile:
    def test_config_supplies_missing_flags(self, data_file, tmp_path, capsys):
        path, _ = data_file
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "# selection settings\n"
            "n = 30\n"
            "m = 300\n"
            "estimator = hist\n"
            "bins = 5\n"
            "seed = 13\n"
            "\n"
        )
        rc = cli.main(["sample", "--input", str(path), "--config", str(cfg)])
        assert rc == 0
        assert "selected 30 of 700" in capsys.readouterr().out

    def test_flags_override_config(self, data_file, tmp_path, capsys):
        path, _ = data_file
        cfg = tmp_path / "run.cfg"
        cfg.write_text("n=30\nm=300\nestimator=hist\nbins=5\nseed=13\n")
        rc = cli.main([
            "sample", "--input", str(path), "--config", str(cfg), "--n", "55",
        ])
        assert rc == 0
        assert "selected 55 of 700" in capsys.readouterr().out

    def test_dashed_keys_map_to_flags(self, data_file, tmp_path):
        path, _ = data_file
        idx_out = tmp_path / "idx.csv"
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            f"n=20\nm=200\nestimator=hist\nbins=5\nindices-out={idx_out}\n"
        )
        rc = cli.main(["sample", "--input", str(path), "--config", str(cfg)])
        assert rc == 0
        assert np.loadtxt(idx_out, dtype=np.int64).shape == (20,)

    def test_unknown_key_rejected(self, data_file, tmp_path):
        path, _ = data_file
        cfg = tmp_path / "run.cfg"
        cfg.write_text("frobnicate=1\n")
        assert cli.main(["sample", "--input", str(path), "--config", str(cfg), "--n", "5"]) == 2

    def test_wrong_type_rejected(self, data_file, tmp_path):
        path, _ = data_file
        cfg = tmp_path / "run.cfg"
        cfg.write_text("n=lots\n")
        assert cli.main(["sample", "--input", str(path), "--config", str(cfg)]) == 2

    def test_malformed_line_rejected(self, data_file, tmp_path):
        path, _ = data_file
        cfg = tmp_path / "run.cfg"
        cfg.write_text("just a line\n")
        assert cli.main(["sample", "--input", str(path), "--config", str(cfg)]) == 2

    def test_missing_config_file(self, data_file, tmp_path):
        path, _ = data_file
        rc = cli.main([
            "sample", "--input", str(path),
            "--config", str(tmp_path / "absent.cfg"), "--n", "5",
        ])
        assert rc == 2


class TestBench:
    def test_list_names_every_preset(self, capsys):
        assert cli.main(["bench", "--list"]) == 0
        from phasefold.bench import PRESETS

        out = capsys.readouterr().out.split()
        assert sorted(out) == sorted(PRESETS)

    def test_tiny_preset_run(self, tmp_path):
        out = tmp_path / "bench"
        rc = cli.main([
            "bench", "--experiment", "fig7", "--out", str(out),
            "--reps", "1", "--rows", "300", "--seed", "6",
        ])
        assert rc == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["failed"] == []
        assert (out / "results.csv").exists()

    def test_unknown_experiment(self, tmp_path):
        rc = cli.main(["bench", "--experiment", "nope", "--out", str(tmp_path)])
        assert rc == 2

    def test_missing_experiment(self, tmp_path):
        assert cli.main(["bench", "--out", str(tmp_path)]) == 2


class TestExitCodes:
    def test_no_command_is_usage_error(self, capsys):
        assert cli.main([]) == 2
        capsys.readouterr()

    def test_unknown_flag_raises_systemexit_2(self):
        with pytest.raises(SystemExit) as excinfo:
            cli.main(["sample", "--frobnicate"])
        assert excinfo.value.code == 2

    def test_missing_input_file_is_io_error(self, tmp_path):
        rc = cli.main(["metric", "--input", str(tmp_path / "absent.csv")])
        assert rc == 3
