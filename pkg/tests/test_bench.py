"""Benchmark harness: generator correctness, grid enumeration, seed
stability, CSV/manifest outputs, failure isolation, and post-steps."""

import csv
import json
import math

import numpy as np
import pytest

from phasefold import rng
from phasefold.bench import (
    ExperimentSpec,
    GENERATORS,
    MIXTURE_WEIGHTS,
    MIXTURE2D_COMPONENTS,
    _cells,
    make_dataset,
    preset,
    PRESETS,
    run_experiment,
    summarize,
)
from phasefold.data import Dataset, save_dataset
from phasefold.errors import InvalidSpec


def _read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.reader(fh))


class TestGenerators:
    @pytest.mark.parametrize("name", sorted(GENERATORS))
    def test_shapes_and_pdf_are_sane(self, name):
        values, pdf = make_dataset(name, 7, 400)
        assert values.shape[0] == 400
        assert np.isfinite(values).all()
        density = pdf(values)
        assert density.shape == (400,)
        assert (density >= 0).all() and np.isfinite(density).all()

    @pytest.mark.parametrize("name", sorted(GENERATORS))
    def test_deterministic_in_seed(self, name):
        a, _ = make_dataset(name, 11, 200)
        b, _ = make_dataset(name, 11, 200)
        c, _ = make_dataset(name, 12, 200)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_normal1d_pdf_at_zero(self):
        _, pdf = make_dataset("normal1d", 0, 10)
        assert pdf(np.array([[0.0]]))[0] == pytest.approx(
            1.0 / math.sqrt(2 * math.pi), rel=1e-12
        )

    def test_gaussian2d_pdf_at_mean(self):
        _, pdf = make_dataset("gaussian2d", 0, 10)
        # peak of N(mean=(1,1), cov=diag(1,2)) is 1/(2*pi*sqrt(2))
        assert pdf(np.array([[1.0, 1.0]]))[0] == pytest.approx(
            1.0 / (2 * math.pi * math.sqrt(2.0)), rel=1e-12
        )

    def test_small2d_variance(self):
        values, pdf = make_dataset("small2d", 5, 200_000)
        assert values.var(axis=0) == pytest.approx([0.1, 0.1], rel=0.02)
        assert pdf(np.zeros((1, 2)))[0] == pytest.approx(
            1.0 / (2 * math.pi * 0.1), rel=1e-12
        )

    def test_uniform2d_flat_pdf(self):
        values, pdf = make_dataset("uniform2d", 3, 500)
        assert values.min() >= 0.0 and values.max() <= 1.0
        assert np.array_equal(pdf(values), np.ones(500))

    @pytest.mark.parametrize("name,dims", [("mixture2d", 2), ("mixture5d", 5)])
    def test_mixture_pdf_normalizes(self, name, dims):
        _, pdf = make_dataset(name, 1, 10)
        if dims == 2:
            g = np.linspace(-15.0, 15.0, 601)
            xx, yy = np.meshgrid(g, g)
            grid = np.column_stack([xx.ravel(), yy.ravel()])
            total = pdf(grid).sum() * (g[1] - g[0]) ** 2
            assert total == pytest.approx(1.0, abs=1e-3)
        else:
            # Monte Carlo check: E_q[p/q] = 1 with q the generator itself
            values, _ = make_dataset(name, 2, 200_000)
            ratio = pdf(values)
            assert ratio.mean() > 0  # sanity; full check below via samples
            # mean of p over its own samples equals E[p], compare against
            # a second independent sample for stability
            other, _ = make_dataset(name, 3, 200_000)
            assert pdf(values).mean() == pytest.approx(
                pdf(other).mean(), rel=0.05
            )

    def test_mixture_component_proportions(self):
        values, _ = make_dataset("mixture2d", 9, 100_000)
        # the rare mode sits at (-7, 7) with unit sigma; count points
        # within 4 of that center (other modes are >9 away)
        center = np.array([-7.0, 7.0])
        near = np.linalg.norm(values - center, axis=1) < 4.0
        assert near.mean() == pytest.approx(MIXTURE_WEIGHTS[2], abs=0.005)

    def test_mixture_sample_moments_match_components(self):
        values, _ = make_dataset("mixture2d", 11, 400_000)
        weights = np.array([c[0] for c in MIXTURE2D_COMPONENTS])
        means = np.array([c[1] for c in MIXTURE2D_COMPONENTS])
        covs = np.array([c[2] for c in MIXTURE2D_COMPONENTS])
        mean = weights @ means
        second = np.einsum(
            "k,kij->ij", weights, covs + np.einsum("ki,kj->kij", means, means)
        )
        cov = second - np.outer(mean, mean)
        assert np.allclose(values.mean(axis=0), mean, atol=0.02)
        assert np.allclose(np.cov(values.T), cov, rtol=0.02, atol=0.02)

    def test_unknown_generator_rejected(self):
        with pytest.raises(InvalidSpec):
            make_dataset("nope", 0, 10)
        with pytest.raises(InvalidSpec):
            make_dataset("normal1d", 0, 0)


class TestSpecAndCells:
    def _spec(self, **kw):
        base = dict(
            experiment="t", output_dir="unused", generator="uniform2d",
            methods=("random",), n_values=(10,), repetitions=1, n_rows=100,
        )
        base.update(kw)
        return ExperimentSpec(**base)

    def test_validation_errors(self, tmp_path):
        with pytest.raises(InvalidSpec):
            self._spec(repetitions=0).validate()
        with pytest.raises(InvalidSpec):
            self._spec(methods=()).validate()
        with pytest.raises(InvalidSpec):
            self._spec(n_values=()).validate()
        with pytest.raises(InvalidSpec):
            self._spec(methods=("nope",)).validate()
        with pytest.raises(InvalidSpec):
            self._spec(generator=None).validate()
        with pytest.raises(InvalidSpec):
            self._spec(input_path="x.csv").validate()  # both sources
        with pytest.raises(InvalidSpec):
            self._spec(
                generator=None, input_path="x.csv", methods=("exact_pdf",)
            ).validate()

    def test_grid_collapses_irrelevant_axes(self):
        spec = self._spec(
            methods=("random", "predictor", "predictor_corrector"),
            estimators=("hist", "flow"),
            n_values=(10,),
            m_values=(50, 80),
            iters_values=(2, 3),
        )
        cells = list(_cells(spec))
        ids = [c[0] for c in cells]
        assert len(ids) == len(set(ids))
        by_method = {}
        for cid, method, est, n, m, iters in cells:
            by_method.setdefault(method, []).append((est, n, m, iters))
        # random ignores estimator/m/iters entirely
        assert by_method["random"] == [("-", 10, 0, 1)]
        # predictor ignores iters, sweeps estimator x m
        assert sorted(by_method["predictor"]) == [
            ("flow", 10, 50, 1), ("flow", 10, 80, 1),
            ("hist", 10, 50, 1), ("hist", 10, 80, 1),
        ]
        # corrector sweeps everything
        assert len(by_method["predictor_corrector"]) == 8

    def test_cell_seeds_are_stable_under_grid_growth(self, tmp_path):
        common = dict(
            generator="uniform2d", n_values=(15,), repetitions=2, n_rows=400,
            master_seed=77,
        )
        small = ExperimentSpec(
            experiment="a", output_dir=str(tmp_path / "a"),
            methods=("random",), **common,
        )
        grown = ExperimentSpec(
            experiment="b", output_dir=str(tmp_path / "b"),
            methods=("brute_force", "random"), extras={"bf_iters": 3},
            **common,
        )
        runs_small = run_experiment(small)["runs"]
        runs_grown = run_experiment(grown)["runs"]
        picked = {(r.cell_id, r.rep): r for r in runs_grown}
        for run in runs_small:
            twin = picked[(run.cell_id, run.rep)]
            assert twin.seed == run.seed
            assert np.array_equal(twin.indices, run.indices)
            assert twin.criterion == run.criterion


class TestRunExperiment:
    def test_outputs_and_manifest(self, tmp_path):
        spec = ExperimentSpec(
            experiment="t", output_dir=str(tmp_path), generator="uniform2d",
            methods=("random", "predictor"), n_values=(20,), m_values=(200,),
            estimators=("hist",), repetitions=3, n_rows=800,
            extras={"bins": 6},
        )
        bundle = run_experiment(spec)
        rows = _read_csv(tmp_path / "results.csv")
        assert rows[0][:4] == ["experiment", "cell_id", "method", "estimator"]
        assert len(rows) - 1 == 2 * 3  # cells x reps
        for row in rows[1:]:
            assert float(row[rows[0].index("criterion")]) > 0
            assert int(row[rows[0].index("realized")]) == 20
        summary = _read_csv(tmp_path / "summary.csv")
        assert len(summary) - 1 == 2
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["failed"] == []
        assert manifest["rows_written"] == 6
        assert len(manifest["completed_cells"]) == 2
        assert set(summarize(bundle["runs"])) == set(manifest["completed_cells"])

    def test_reruns_are_identical(self, tmp_path):
        def go(sub):
            spec = ExperimentSpec(
                experiment="t", output_dir=str(tmp_path / sub),
                generator="mixture2d", methods=("random", "stratified"),
                n_values=(25,), repetitions=2, n_rows=900,
                extras={"clusters": 4}, master_seed=5,
            )
            return run_experiment(spec)["runs"]

        first, second = go("one"), go("two")
        assert len(first) == len(second)
        for a, b in zip(first, second):
            assert a.cell_id == b.cell_id and a.rep == b.rep
            assert np.array_equal(a.indices, b.indices)
            assert a.criterion == b.criterion

    def test_failing_cell_is_isolated(self, tmp_path):
        spec = ExperimentSpec(
            experiment="t", output_dir=str(tmp_path), generator="uniform2d",
            methods=("predictor", "random"), n_values=(20,),
            m_values=(5000,),  # exceeds n_rows -> invalid for predictor only
            estimators=("hist",), repetitions=2, n_rows=600,
        )
        bundle = run_experiment(spec)
        manifest = bundle["manifest"]
        assert len(manifest["failed"]) == 1
        assert manifest["failed"][0]["error"] == "InvalidSpec"
        assert manifest["completed_cells"] == ["random_-_n20_m0_it1"]
        rows = _read_csv(tmp_path / "results.csv")
        assert len(rows) - 1 == 2  # only the random cell's two reps

    def test_input_path_route(self, tmp_path):
        gen = rng.stream(8, "bench-input")
        path = tmp_path / "points.csv"
        save_dataset(Dataset(gen.normal(size=(500, 2))), str(path))
        spec = ExperimentSpec(
            experiment="t", output_dir=str(tmp_path / "out"),
            generator=None, input_path=str(path),
            methods=("random",), n_values=(12,), repetitions=1,
        )
        bundle = run_experiment(spec)
        assert bundle["manifest"]["n_rows"] == 500
        assert len(bundle["runs"]) == 1


class TestScalingRunners:
    def test_row_scaling_writes_one_line_per_size_and_rep(self, tmp_path):
        spec = ExperimentSpec(
            experiment="scaling-n", output_dir=str(tmp_path),
            generator="uniform2d", methods=("predictor",), n_values=(10,),
            m_values=(100,), estimators=("hist",), repetitions=2,
            extras={"bins": 5, "scaling_rows": (300, 600)},
        )
        run_experiment(spec)
        rows = _read_csv(tmp_path / "scaling_rows.csv")
        assert rows[0][0] == "n_rows"
        assert len(rows) - 1 == 2 * 2
        sizes = {row[0] for row in rows[1:]}
        assert sizes == {"300", "600"}
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["mode"] == "row-scaling"

    def test_worker_scaling_covers_strong_and_weak(self, tmp_path):
        spec = ExperimentSpec(
            experiment="scaling-workers", output_dir=str(tmp_path),
            generator="uniform2d", methods=("predictor",), n_values=(10,),
            m_values=(100,), estimators=("hist",), repetitions=1, n_rows=800,
            extras={"bins": 5, "worker_grid": (1, 2)},
        )
        run_experiment(spec)
        rows = _read_csv(tmp_path / "scaling_workers.csv")
        modes = [(row[0], row[1], row[2]) for row in rows[1:]]
        assert ("strong", "1", "800") in modes
        assert ("strong", "2", "800") in modes
        assert ("weak", "1", "400") in modes
        assert ("weak", "2", "800") in modes
        assert len(modes) == 4


class TestPostSteps:
    def test_fig2_histograms(self, tmp_path):
        spec = preset(
            "fig2", str(tmp_path), repetitions=3, n_rows=2000,
            n_values=(50,),
        )
        run_experiment(spec)
        hist = _read_csv(tmp_path / "fig2_hist_n50.csv")
        assert hist[0] == ["bin_center", "mean_count"]
        assert len(hist) - 1 == 20
        total = sum(float(row[1]) for row in hist[1:])
        assert 0 < total <= 50
        clip = _read_csv(tmp_path / "fig2_clip.csv")
        assert clip[0] == ["n", "mean_clip_min_abs", "mean_clipped_fraction"]
        assert float(clip[1][2]) > 0  # some probabilities clip at n=50

    def test_error_curve_export(self, tmp_path):
        spec = preset(
            "fig5", str(tmp_path), repetitions=2, n_rows=2000,
            n_values=(40,), m_values=(400,), estimators=("hist",),
            extras={"curves": True, "bins": 6},
        )
        run_experiment(spec)
        files = sorted(tmp_path.glob("fig5_*.csv"))
        assert len(files) == 2  # one per iteration count
        rows = _read_csv(files[0])
        assert rows[0] == ["bin_center", "mean_rel_err", "reps_with_data"]
        assert len(rows) - 1 == 20

    def test_nll_history_export(self, tmp_path):
        spec = preset(
            "fig6", str(tmp_path), repetitions=1, n_rows=1200,
            n_values=(30,), m_values=(300,),
            extras={"train": {"steps": 8, "batch": 64, "hidden": [8, 8]}},
        )
        run_experiment(spec)
        rows = _read_csv(tmp_path / "fig6_nll.csv")
        assert rows[0] == ["cell_id", "rep", "iteration", "step", "nll"]
        # two iterations x 8 steps each
        assert len(rows) - 1 == 16
        assert {row[2] for row in rows[1:]} == {"1", "2"}

    def test_scatter_export(self, tmp_path):
        spec = preset(
            "appendix-a", str(tmp_path), n_rows=1500, n_values=(25,),
            m_values=(250,),
        )
        run_experiment(spec)
        files = sorted(tmp_path.glob("scatter_*.csv"))
        assert len(files) == 2
        rows = _read_csv(files[0])
        assert rows[0] == ["x0", "x1"]
        assert len(rows) - 1 == 25

    def test_normalized_sensitivity(self, tmp_path):
        spec = preset(
            "sensitivity-m", str(tmp_path), repetitions=2, n_rows=1500,
            n_values=(20,), m_values=(150, 300), extras={"bins": 6},
        )
        run_experiment(spec)
        rows = _read_csv(tmp_path / "normalized.csv")
        assert rows[0][-2:] == ["criterion_mean", "normalized"]
        assert len(rows) - 1 == 2
        # first grid cell is its own reference
        assert float(rows[1][-1]) == pytest.approx(1.0)
        for row in rows[1:]:
            assert float(row[-2]) > 0


class TestPresets:
    def test_all_presets_build_valid_specs(self, tmp_path):
        for name in PRESETS:
            spec = preset(name, str(tmp_path / name))
            spec.validate()
            assert spec.experiment == name

    def test_overrides_apply(self, tmp_path):
        spec = preset("table1", str(tmp_path), repetitions=2, n_rows=5000)
        assert spec.repetitions == 2
        assert spec.n_rows == 5000

    def test_unknown_preset(self, tmp_path):
        with pytest.raises(InvalidSpec):
            preset("nope", str(tmp_path))
