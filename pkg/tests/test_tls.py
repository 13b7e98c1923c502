import numpy as np
import pytest

from oracles import brute_force_tls_min, brute_force_tls_objective

from regkit.tls import solve_tls_1d, weighted_median


class TestSolveTls1d:
    def test_unanimous_measurements(self):
        result = solve_tls_1d([2.0, 2.0, 2.0, 2.0], [0.1] * 4, [1.0] * 4)
        assert result.value == pytest.approx(2.0, abs=1e-12)
        assert result.inlier_mask.all()
        assert not result.consensus_fallback

    def test_single_measurement_returned_exactly(self):
        result = solve_tls_1d([3.7], [0.5], [2.0])
        assert result.value == 3.7
        assert not result.consensus_fallback

    def test_majority_with_gross_outliers(self, rng):
        inliers = 1.0 + rng.normal(0, 0.003, 70)
        outliers = rng.uniform(0.2, 5.0, 30)
        x = np.concatenate([inliers, outliers])
        result = solve_tls_1d(x, np.full(100, 0.01), np.ones(100))
        assert 0.99 <= result.value <= 1.01

    def test_matches_brute_force_on_small_instances(self, rng):
        for trial in range(200):
            n = int(rng.integers(2, 13))
            x = rng.uniform(-5, 5, n)
            b = rng.uniform(0.05, 1.5, n)
            w = rng.uniform(0.1, 3.0, n)
            got = solve_tls_1d(x, b, w)
            _, best_obj = brute_force_tls_min(x, b, w)
            mine = brute_force_tls_objective(got.value, x, b, w)
            assert mine <= best_obj + 1e-6, f"trial {trial}: {mine} > {best_obj}"
            assert abs(got.objective - mine) < 1e-9

    def test_disjoint_intervals_flagged_and_still_optimal(self):
        x = np.array([0.0, 10.0, 20.0, 30.0])
        result = solve_tls_1d(x, np.full(4, 0.01), np.array([1.0, 1.0, 5.0, 1.0]))
        assert result.consensus_fallback
        # The exact minimizer keeps only the heaviest measurement.
        assert result.value == pytest.approx(20.0, abs=1e-9)

    def test_weighted_median_lower_convention(self):
        assert weighted_median([1.0, 2.0, 3.0, 4.0], [1, 1, 1, 1]) == 2.0
        assert weighted_median([5.0, 1.0, 3.0], [1, 1, 1]) == 3.0
        assert weighted_median([1.0, 100.0], [10.0, 1.0]) == 1.0

    def test_validation(self):
        with pytest.raises(ValueError):
            solve_tls_1d([], [], [])
        with pytest.raises(ValueError):
            solve_tls_1d([1.0], [0.0], [1.0])
        with pytest.raises(ValueError):
            solve_tls_1d([1.0], [1.0], [-1.0])
