"""Tests for nearest-neighbor search, the distance criterion, and
conditional acceptance-error curves."""

import csv
import math

import numpy as np
import pytest
from scipy import stats

from phasefold import rng
from phasefold.data import Dataset
from phasefold.errors import InvalidSpec
from phasefold.metrics import (
    ConditionalErrorCurve,
    NNIndex,
    conditional_acceptance_error,
    distance_criterion,
    nearest_neighbors,
    write_curve_csv,
)
from phasefold.selection import exact_pdf_acceptance


class TestNearestNeighbors:
    def test_grid_distances_are_one(self):
        xs, ys = np.meshgrid(np.arange(3.0), np.arange(3.0))
        grid = np.column_stack([xs.ravel(), ys.ravel()])
        _, distances = nearest_neighbors(grid)
        np.testing.assert_array_equal(distances, np.ones(9))

    def test_duplicates_tie_break_to_lower_index(self):
        points = np.array([[1.0], [1.0], [2.0]])
        indices, distances = nearest_neighbors(points)
        np.testing.assert_array_equal(indices, [1, 0, 0])
        np.testing.assert_array_equal(distances, [0.0, 0.0, 1.0])

    def test_methods_agree_on_random_instances(self):
        # 100 random instances, sizes weighted toward small but reaching
        # 2000 points and 6 dims; the tree must reproduce the quadratic
        # scan bitwise, indices and distances both.
        gen = rng.stream(0, "test-nn-instances")
        for trial in range(100):
            n = int(2 * 1000 ** gen.uniform())
            dims = int(gen.integers(1, 7))
            if trial % 5 == 0:
                # Lattice points: many exact duplicates and distance ties.
                points = gen.integers(0, 4, size=(n, dims)).astype(np.float64)
            else:
                points = gen.normal(size=(n, dims))
            bi, bd = nearest_neighbors(points, method="brute")
            ki, kd = nearest_neighbors(points, method="kdtree")
            np.testing.assert_array_equal(bi, ki)
            np.testing.assert_array_equal(bd, kd)

    def test_small_leaf_sizes_stay_exact(self):
        gen = rng.stream(1, "test-leaf-size")
        points = gen.normal(size=(300, 3))
        bi, bd = nearest_neighbors(points, method="brute")
        for leaf_size in (1, 2, 7):
            ki, kd = nearest_neighbors(points, method="kdtree", leaf_size=leaf_size)
            np.testing.assert_array_equal(bi, ki)
            np.testing.assert_array_equal(bd, kd)

    def test_single_query_with_exclusion(self):
        points = np.array([[0.0, 0.0], [3.0, 4.0], [6.0, 8.0]])
        index = NNIndex(points)
        assert index.query([0.1, 0.1]) == (0, pytest.approx(math.sqrt(0.02)))
        idx, dist = index.query(points[0], exclude=0)
        assert idx == 1
        assert dist == pytest.approx(5.0)

    def test_validation(self):
        with pytest.raises(InvalidSpec):
            nearest_neighbors(np.zeros((1, 2)))
        with pytest.raises(InvalidSpec):
            nearest_neighbors(np.zeros((5, 2)), method="annoy")
        with pytest.raises(InvalidSpec):
            NNIndex(np.zeros((5, 2)), leaf_size=0)
        with pytest.raises(InvalidSpec):
            NNIndex(np.zeros((5, 2))).query([0.0, 0.0, 0.0])

    def test_dataset_input(self):
        ds = Dataset(np.array([[0.0], [1.0], [3.0]]))
        indices, distances = nearest_neighbors(ds)
        np.testing.assert_array_equal(indices, [1, 0, 1])
        np.testing.assert_array_equal(distances, [1.0, 1.0, 2.0])


class TestDistanceCriterion:
    def test_two_points(self):
        value = distance_criterion(np.array([[0.0], [7.5]]), rescale=False)
        assert value == pytest.approx(7.5, rel=1e-15)

    def test_three_point_line(self):
        value = distance_criterion(np.array([[0.0], [1.0], [3.0]]), rescale=False)
        assert value == pytest.approx(4 / 3, rel=1e-15)

    def test_three_point_line_rescaled(self):
        # Mapping {0,1,3} onto [-4,4] multiplies every gap by 8/3.
        value = distance_criterion(np.array([[0.0], [1.0], [3.0]]), rescale=True)
        assert value == pytest.approx(32 / 9, rel=1e-14)

    def test_reference_population_controls_the_scale(self):
        subset = np.array([[0.0], [1.0]])
        parent = np.array([[0.0], [1.0], [3.0]])
        fit_on_subset = distance_criterion(subset, rescale=True)
        fit_on_parent = distance_criterion(subset, rescale=True, reference=parent)
        assert fit_on_subset == pytest.approx(8.0, rel=1e-14)
        assert fit_on_parent == pytest.approx(8 / 3, rel=1e-14)

    def test_permutation_invariance(self):
        gen = rng.stream(2, "test-perm")
        points = gen.normal(size=(400, 3))
        base = distance_criterion(points, rescale=False)
        shuffled = points[gen.permutation(400)]
        assert distance_criterion(shuffled, rescale=False) == pytest.approx(
            base, rel=1e-12
        )

    def test_translation_invariance(self):
        gen = rng.stream(3, "test-shift")
        points = gen.normal(size=(300, 2))
        base = distance_criterion(points, rescale=False)
        shifted = distance_criterion(points + 17.25, rescale=False)
        assert shifted == pytest.approx(base, rel=1e-9)

    def test_scaling_linearity(self):
        gen = rng.stream(4, "test-scale")
        points = gen.normal(size=(300, 2))
        base = distance_criterion(points, rescale=False)
        # Power-of-two scaling is exact in floating point.
        assert distance_criterion(points * 2.0, rescale=False) == 2.0 * base
        assert distance_criterion(points * 3.0, rescale=False) == pytest.approx(
            3.0 * base, rel=1e-12
        )

    def test_rescaled_criterion_ignores_parent_translation(self):
        gen = rng.stream(5, "test-affine")
        points = gen.normal(size=(200, 2))
        a = distance_criterion(points, rescale=True)
        b = distance_criterion(points * 5.0 - 3.0, rescale=True)
        assert b == pytest.approx(a, rel=1e-10)

    def test_needs_two_points(self):
        with pytest.raises(InvalidSpec):
            distance_criterion(np.zeros((1, 3)))


class TestConditionalError:
    def _setup(self, n=4000, target=200):
        data = rng.stream(6, "test-cond").normal(size=(n, 1))
        pdf = lambda x: stats.norm.pdf(x[:, 0])
        exact = exact_pdf_acceptance(pdf, data, target)
        return data, pdf, exact

    def test_exact_estimate_gives_zero_errors(self):
        data, pdf, exact = self._setup()
        curve = conditional_acceptance_error(pdf, exact, data)
        filled = ~curve.empty
        assert filled.any()
        np.testing.assert_allclose(curve.rel_mean[filled], 0.0, atol=1e-14)
        np.testing.assert_allclose(curve.abs_mean[filled], 0.0, atol=1e-14)

    def test_density_rescaling_cancels_after_calibration(self):
        # An estimate that is exactly 2x the true density calibrates to
        # the same probabilities, so the curve stays at zero error.
        data, pdf, _ = self._setup()
        doubled = exact_pdf_acceptance(lambda x: 2.0 * pdf(x), data, 200)
        curve = conditional_acceptance_error(pdf, doubled, data)
        filled = ~curve.empty
        np.testing.assert_allclose(curve.rel_mean[filled], 0.0, atol=1e-9)

    def test_counts_conserved_and_empty_bins_marked(self):
        data, pdf, exact = self._setup()
        curve = conditional_acceptance_error(pdf, exact, data, bins=20)
        assert curve.counts.sum() == data.shape[0]
        # The clip plateau at probability 1 leaves interior bins empty.
        assert curve.empty.any()
        assert np.isnan(curve.rel_mean[curve.empty]).all()
        assert np.isnan(curve.abs_mean[curve.empty]).all()
        assert not np.isnan(curve.rel_mean[~curve.empty]).any()

    def test_bare_array_estimate_requires_target(self):
        data, pdf, exact = self._setup(n=100, target=10)
        probs = exact.probabilities
        with pytest.raises(InvalidSpec):
            conditional_acceptance_error(pdf, probs, data)
        curve = conditional_acceptance_error(pdf, probs, data, target=10)
        assert curve.counts.sum() == 100
        with pytest.raises(InvalidSpec):
            conditional_acceptance_error(pdf, probs[:-1], data, target=10)

    def test_biased_estimate_shows_positive_error(self):
        data, pdf, exact = self._setup()
        noisy = np.clip(exact.probabilities * 1.5, 0.0, 1.0)
        curve = conditional_acceptance_error(pdf, noisy, data, target=200)
        filled = ~curve.empty
        assert (curve.rel_mean[filled] >= 0).all()
        assert curve.rel_mean[filled].max() > 0.1

    def test_degenerate_exact_range_uses_single_bin(self):
        data = rng.stream(7, "test-flat").uniform(0, 1, size=(500, 1))
        pdf = lambda x: np.ones(x.shape[0])
        exact = exact_pdf_acceptance(pdf, data, 50)
        curve = conditional_acceptance_error(pdf, exact, data, bins=20)
        assert curve.counts.sum() == 500
        assert curve.counts[0] == 500
        assert (curve.counts[1:] == 0).all()

    def test_csv_export(self, tmp_path):
        data, pdf, exact = self._setup(n=1000, target=100)
        curve = conditional_acceptance_error(pdf, exact, data)
        path = tmp_path / "curve.csv"
        write_curve_csv(curve, str(path))
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["bin_center", "rel_err", "abs_err", "count"]
        assert len(rows) == 1 + curve.centers.shape[0]
        for row, center, rel, count in zip(
            rows[1:], curve.centers, curve.rel_mean, curve.counts
        ):
            assert float(row[0]) == center
            assert int(row[3]) == count
            if math.isnan(rel):
                assert row[1] == ""
            else:
                assert float(row[1]) == rel
