"""LOF scoring tests against an independent brute-force oracle."""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcfo import (
    DuplicatePointError,
    ExactLOF,
    ThresholdPolicy,
    relocated_score,
    sample_gaussian,
    select_threshold,
)
from dcfo.lof import _smallest_k

import lof_oracle as oracle
from conftest import MICRO_1D


class TestMicroValues:
    """Hand-checkable 1-D dataset {0, 1, 2, 10} with k=2."""

    def test_k_distances(self, micro_model):
        np.testing.assert_array_equal(
            micro_model.k_distances_, [2.0, 1.0, 2.0, 9.0]
        )

    def test_neighbor_lists_tie_broken_by_index(self, micro_model):
        # point 1 is equidistant from 0 and 2; the lower index wins slot one
        np.testing.assert_array_equal(
            micro_model.knn_indices_, [[1, 2], [0, 2], [1, 0], [2, 1]]
        )

    def test_lrd(self, micro_model):
        expected = [
            Fraction(2, 3),
            Fraction(1, 2),
            Fraction(2, 3),
            Fraction(2, 17),
        ]
        np.testing.assert_allclose(
            micro_model.lrd_, [float(f) for f in expected], rtol=0, atol=0
        )

    def test_lof_scores(self, micro_model):
        expected = [
            Fraction(7, 8),
            Fraction(4, 3),
            Fraction(7, 8),
            Fraction(119, 24),
        ]
        # summation order costs one ulp on the 7/8 entries
        np.testing.assert_allclose(
            micro_model.lof_scores_, [float(f) for f in expected], rtol=5e-16
        )

    def test_query_score_with_exclusion(self, micro_model):
        # scoring x=6 with point 3 removed: kNN={2,1}, rd={4,5}, lrd(x)=2/9,
        # LOF = (2/3 + 1/2) / (2 * 2/9) = 21/8
        got = micro_model.score_point([6.0], exclude=3)
        assert got == pytest.approx(float(Fraction(21, 8)), abs=0)
        assert got == pytest.approx(
            oracle.brute_query_lof(MICRO_1D, 2, [6.0], exclude=3)
        )

    def test_exclusion_view_statistics(self, micro_model):
        view = micro_model._view(3)
        np.testing.assert_array_equal(view.kdist_of([0, 1, 2]), [2.0, 1.0, 2.0])
        np.testing.assert_allclose(
            view.lrd_of([0, 1, 2]), [2 / 3, 1 / 2, 2 / 3], rtol=0, atol=0
        )

    def test_oracle_agrees_on_training_scores(self, micro_model):
        np.testing.assert_allclose(
            micro_model.lof_scores_, oracle.brute_all_lof(MICRO_1D, 2), rtol=1e-15
        )


class TestOracleEquivalence:
    @pytest.mark.parametrize("seed,n,dim,k", [
        (0, 30, 2, 3),
        (1, 50, 4, 5),
        (2, 80, 3, 10),
        (3, 25, 1, 4),
    ])
    def test_training_scores_match_brute_oracle(self, seed, n, dim, k):
        X = sample_gaussian(n, dim, seed=seed).points
        model = ExactLOF(k=k).fit(X)
        np.testing.assert_allclose(
            model.lof_scores_, oracle.brute_all_lof(X, k), rtol=1e-12
        )

    @pytest.mark.parametrize("exclude", [None, 0, 7])
    def test_query_scores_match_oracle(self, exclude):
        X = sample_gaussian(40, 2, seed=11).points
        model = ExactLOF(k=4).fit(X)
        rng = np.random.default_rng(5)
        for q in rng.standard_normal((10, 2)) * 2.0:
            got = model.score_point(q, exclude=exclude)
            want = oracle.brute_query_lof(X, 4, q, exclude=exclude)
            assert got == pytest.approx(want, rel=1e-12)

    def test_brute_and_tree_paths_agree(self):
        X = sample_gaussian(120, 3, seed=21).points
        a = ExactLOF(k=6, neighbor_algorithm="brute").fit(X)
        b = ExactLOF(k=6, neighbor_algorithm="kd_tree").fit(X)
        np.testing.assert_allclose(a.lof_scores_, b.lof_scores_, rtol=1e-12)
        np.testing.assert_array_equal(a.knn_indices_, b.knn_indices_)
        q = np.array([0.3, -0.4, 1.1])
        assert a.score_point(q, exclude=5) == pytest.approx(
            b.score_point(q, exclude=5), rel=1e-12
        )

    def test_uniform_grid_point_scores_one(self):
        # deep inside a uniform 1-D grid every lrd matches, so LOF is 1
        X = np.arange(10.0).reshape(-1, 1)
        model = ExactLOF(k=2).fit(X)
        assert model.score_point([4.5]) == pytest.approx(1.0, abs=1e-12)


class TestRelocation:
    def test_relocating_to_self_reproduces_training_score(self):
        X = sample_gaussian(30, 2, seed=3).points
        model = ExactLOF(k=4).fit(X)
        for i in (0, 7, 29):
            assert model.score_relocated(i, X[i]) == pytest.approx(
                model.lof_scores_[i], rel=1e-12
            )

    def test_matches_oracle(self):
        X = sample_gaussian(30, 2, seed=9).points
        model = ExactLOF(k=3).fit(X)
        target = np.array([0.1, 0.2])
        got = model.score_relocated(4, target)
        assert got == pytest.approx(
            oracle.brute_relocated_lof(X, 3, 4, target), rel=1e-12
        )

    def test_function_and_method_agree(self):
        X = sample_gaussian(25, 2, seed=13).points
        model = ExactLOF(k=3).fit(X)
        target = [1.0, -1.0]
        assert relocated_score(X, 3, 2, target) == model.score_relocated(2, target)


class TestDuplicatePolicies:
    def test_epsilon_keeps_duplicates_finite(self):
        X = np.array([[0.0], [0.0], [0.0], [5.0], [6.0]])
        model = ExactLOF(k=2, duplicate_policy="epsilon").fit(X)
        assert np.all(np.isfinite(model.lof_scores_))
        assert np.all(np.isfinite(model.lrd_))

    def test_reject_raises_on_duplicates(self):
        X = np.array([[0.0], [0.0], [0.0], [5.0], [6.0]])
        with pytest.raises(DuplicatePointError):
            ExactLOF(k=2, duplicate_policy="reject").fit(X)

    def test_reject_passes_on_clean_data(self):
        X = sample_gaussian(20, 2, seed=1).points
        model = ExactLOF(k=3, duplicate_policy="reject").fit(X)
        assert np.all(np.isfinite(model.lof_scores_))

    def test_unknown_policy_rejected(self):
        with pytest.raises(ValueError, match="duplicate_policy"):
            ExactLOF(k=2, duplicate_policy="zero").fit(np.zeros((5, 1)))


class TestFitValidation:
    def test_too_few_points(self):
        X = np.zeros((3, 2))
        with pytest.raises(ValueError, match="k\\+2"):
            ExactLOF(k=2).fit(X)

    def test_minimum_size_accepted(self):
        X = sample_gaussian(4, 2, seed=0).points
        model = ExactLOF(k=2).fit(X)
        assert model.lof_scores_.shape == (4,)

    def test_bad_algorithm_name(self):
        with pytest.raises(ValueError, match="neighbor_algorithm"):
            ExactLOF(k=2, neighbor_algorithm="ball").fit(np.zeros((6, 1)))

    def test_unfitted_query_raises(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            ExactLOF(k=2).score_point([0.0])

    def test_get_params_round_trip(self):
        model = ExactLOF(k=7, duplicate_policy="reject")
        params = model.get_params()
        assert params["k"] == 7 and params["duplicate_policy"] == "reject"
        clone = ExactLOF(**params)
        assert clone.get_params() == params


class TestScoreSamples:
    def test_matches_score_point_loop(self):
        X = sample_gaussian(40, 2, seed=17).points
        model = ExactLOF(k=5).fit(X)
        Q = sample_gaussian(8, 2, seed=18).points * 1.5
        batch = model.score_samples(Q)
        single = [model.score_point(q) for q in Q]
        np.testing.assert_allclose(batch, single, rtol=0, atol=0)


class TestSmallestK:
    @settings(max_examples=80, deadline=None)
    @given(
        st.lists(st.floats(0.0, 100.0, allow_nan=False), min_size=1, max_size=40),
        st.integers(1, 40),
    )
    def test_matches_stable_sort(self, values, k):
        dist = np.asarray(values, dtype=np.float64)
        k = min(k, dist.size)
        got = _smallest_k(dist, k)
        want = np.argsort(dist, kind="stable")[:k]
        np.testing.assert_array_equal(got, want)

    def test_tie_prefers_lower_index(self):
        dist = np.array([3.0, 1.0, 1.0, 0.5])
        np.testing.assert_array_equal(_smallest_k(dist, 3), [3, 1, 2])


class TestThresholds:
    def test_parse_fixed_and_quantile(self):
        p = ThresholdPolicy.parse("fixed:1.5")
        assert (p.kind, p.value) == ("fixed", 1.5)
        q = ThresholdPolicy.parse("quantile:0.9")
        assert (q.kind, q.value) == ("quantile", 0.9)
        assert ThresholdPolicy.parse("auto") is None

    def test_parse_rejects_garbage(self):
        for bad in ("fixed", "median:2", "quantile:1.5", "fixed:abc"):
            with pytest.raises(ValueError):
                ThresholdPolicy.parse(bad)

    def test_spec_round_trip(self):
        p = ThresholdPolicy.quantile(0.95)
        assert ThresholdPolicy.parse(p.spec()) == p

    def test_quantile_linear_interpolation(self):
        scores = np.array([1.0, 2.0, 3.0, 4.0])
        assert select_threshold(scores, ThresholdPolicy.quantile(0.5)) == 2.5

    def test_fixed_ignores_scores(self):
        assert select_threshold([9.0, 9.0], ThresholdPolicy.fixed(1.5)) == 1.5

    def test_select_rejects_bad_scores(self):
        with pytest.raises(ValueError):
            select_threshold([], ThresholdPolicy.fixed(1.0))
        with pytest.raises(ValueError):
            select_threshold([1.0, np.nan], ThresholdPolicy.quantile(0.5))
