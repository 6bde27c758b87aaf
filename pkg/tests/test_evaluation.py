import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ortho_group

from rspin.evaluation import (
    BoundarySet,
    boundaries_from_units,
    char_boundaries_from_words,
    cluster_purity,
    linear_cka,
    majority_baseline,
    match_boundaries,
    pooled_segmentation_metrics,
    segmentation_metrics,
    uniform_segmentation,
)

from .oracles import purity_by_counting


class TestCka:
    def test_self_similarity(self, rng):
        X = rng.standard_normal((50, 8))
        assert abs(linear_cka(X, X) - 1) <= 1e-9

    def test_orthogonal_and_scale_invariance(self, rng):
        X = rng.standard_normal((60, 6))
        Y = np.tanh(X @ rng.standard_normal((6, 4)))
        R = ortho_group.rvs(6, random_state=1)
        assert abs(linear_cka(X @ R, Y) - linear_cka(X, Y)) <= 1e-9
        assert abs(linear_cka(-3.5 * X, Y) - linear_cka(X, Y)) <= 1e-9
        assert abs(linear_cka(X, X @ R) - 1) <= 1e-9

    def test_independent_matrices_are_dissimilar(self, rng):
        X = rng.standard_normal((200, 16))
        Y = rng.standard_normal((200, 16))
        assert linear_cka(X, Y) < 0.2

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1), T=st.integers(3, 40),
           a=st.integers(1, 6), b=st.integers(1, 6))
    def test_symmetric_and_bounded(self, seed, T, a, b):
        r = np.random.default_rng(seed)
        X, Y = r.standard_normal((T, a)), r.standard_normal((T, b))
        v = linear_cka(X, Y)
        assert abs(v - linear_cka(Y, X)) <= 1e-12
        assert -1e-12 <= v <= 1 + 1e-12

    def test_matches_kernel_form(self, rng):
        # HSIC form on Gram matrices, written independently.
        X, Y = rng.standard_normal((30, 5)), rng.standard_normal((30, 3))
        H = np.eye(30) - 1.0 / 30
        K, L = H @ X @ X.T @ H, H @ Y @ Y.T @ H
        ref = np.sum(K * L) / np.sqrt(np.sum(K * K) * np.sum(L * L))
        assert linear_cka(X, Y) == pytest.approx(ref, abs=1e-12)

    def test_constant_input(self):
        with pytest.raises(ValueError):
            linear_cka(np.ones((5, 2)), np.arange(10.0).reshape(5, 2))

    def test_row_mismatch(self, rng):
        with pytest.raises(ValueError):
            linear_cka(rng.standard_normal((5, 2)), rng.standard_normal((6, 2)))


class TestBoundaries:
    @pytest.mark.parametrize("units, expected", [
        ([1, 1, 2, 2, 3], (2, 4)),
        ([4, 4, 4], ()),
        ([1, 2, 1, 2], (1, 2, 3)),
    ])
    def test_from_units(self, units, expected):
        assert boundaries_from_units(units).positions == expected

    @settings(max_examples=100, deadline=None)
    @given(seq=st.lists(st.integers(0, 3), min_size=1, max_size=30))
    def test_empty_iff_constant(self, seq):
        assert (len(boundaries_from_units(seq)) == 0) == (len(set(seq)) == 1)

    def test_invalid_sets(self):
        with pytest.raises(ValueError):
            BoundarySet((3, 2), 10)
        with pytest.raises(ValueError):
            BoundarySet((0,), 10)
        with pytest.raises(ValueError):
            BoundarySet((10,), 10)

    @pytest.mark.parametrize("n, length, expected", [(1, 10, (5,)), (0, 10, ()), (3, 8, (2, 4, 6))])
    def test_uniform(self, n, length, expected):
        assert uniform_segmentation(n, length).positions == expected

    def test_uniform_too_many(self):
        with pytest.raises(ValueError):
            uniform_segmentation(5, 5)

    @settings(max_examples=100, deadline=None)
    @given(length=st.integers(1, 200), data=st.data())
    def test_uniform_size_bound(self, length, data):
        n = data.draw(st.integers(0, length - 1))
        assert len(uniform_segmentation(n, length)) <= n

    def test_char_bisection(self):
        assert char_boundaries_from_words([(0, 4, 2)]).positions == (2,)

    def test_char_single_char_words(self):
        assert char_boundaries_from_words([(0, 3, 1), (3, 7, 1)]).positions == (3,)

    def test_char_two_words(self):
        assert char_boundaries_from_words([(0, 6, 3), (6, 8, 1)]).positions == (2, 4, 6)

    def test_char_overlap(self):
        with pytest.raises(ValueError):
            char_boundaries_from_words([(0, 5, 2), (4, 8, 1)])


def bs(positions, length=100):
    return BoundarySet(tuple(positions), length)


class TestSegmentationMetrics:
    def test_perfect(self):
        ref = bs([10, 20, 30])
        m = segmentation_metrics(ref, ref, tol_frames=0)
        assert (m.precision, m.recall, m.f1, m.os, m.r_value) == (1.0, 1.0, 1.0, 0.0, 1.0)

    def test_double_prediction_fixture(self):
        ref = bs([10, 20, 30, 40])
        pred = bs([10, 15, 20, 25, 30, 35, 40, 45])
        m = segmentation_metrics(pred, ref, tol_frames=1)
        assert (m.recall, m.precision, m.os) == (1.0, 0.5, 1.0)
        expected = 1 - (1 + 1 / math.sqrt(2)) / 2
        assert m.r_value == pytest.approx(expected, abs=1e-12)
        assert abs(m.r_value - 0.14645) <= 1e-5

    def test_empty_prediction(self):
        m = segmentation_metrics(bs([]), bs([10, 20]))
        assert (m.precision, m.recall, m.f1, m.os) == (0.0, 0.0, 0.0, -1.0)
        assert m.r_value == pytest.approx(1 - math.sqrt(2) / 2, abs=1e-15)

    def test_empty_reference(self):
        with pytest.raises(ValueError):
            segmentation_metrics(bs([5]), bs([]))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            segmentation_metrics(bs([5], 10), bs([5], 20))

    def test_one_to_one(self):
        # Two references share a single nearby prediction: only one match.
        assert match_boundaries(bs([10]), bs([9, 11]), tol_frames=1) == 1

    def test_greedy_is_maximal(self):
        assert match_boundaries(bs([10, 12]), bs([11, 13]), tol_frames=1) == 2

    @settings(max_examples=100, deadline=None)
    @given(p=st.sets(st.integers(1, 59), max_size=20), r=st.sets(st.integers(1, 59), min_size=1, max_size=20),
           tol=st.integers(0, 5))
    def test_tolerance_monotone(self, p, r, tol):
        pred, ref = bs(sorted(p), 60), bs(sorted(r), 60)
        assert match_boundaries(pred, ref, tol) <= match_boundaries(pred, ref, tol + 1)

    @settings(max_examples=100, deadline=None)
    @given(p=st.sets(st.integers(1, 29), max_size=10), r=st.sets(st.integers(1, 29), min_size=1, max_size=10))
    def test_f1_is_harmonic_mean(self, p, r):
        m = segmentation_metrics(bs(sorted(p), 30), bs(sorted(r), 30))
        if m.precision + m.recall == 0:
            assert m.f1 == 0
        else:
            assert m.f1 == pytest.approx(2 * m.precision * m.recall / (m.precision + m.recall))
        assert m.r_value <= 1

    def test_pooled(self):
        pairs = [(bs([10]), bs([10])), (bs([]), bs([20]))]
        m = pooled_segmentation_metrics(pairs)
        assert (m.recall, m.precision, m.os) == (0.5, 1.0, -0.5)


class TestPurity:
    def test_relabeling_is_perfect(self):
        ref = [0, 1, 2, 1, 0]
        assert cluster_purity([7, 3, 5, 3, 7], ref) == 1.0

    def test_single_cluster_balanced(self):
        assert cluster_purity([0, 0, 0, 0], [0, 1, 0, 1]) == 0.5

    @settings(max_examples=100, deadline=None)
    @given(pairs=st.lists(st.tuples(st.integers(0, 5), st.integers(0, 4)), min_size=1, max_size=40))
    def test_matches_counting_oracle(self, pairs):
        a, r = zip(*pairs)
        assert cluster_purity(a, r) == pytest.approx(purity_by_counting(a, r), abs=1e-15)
        assert cluster_purity(a, r) >= majority_baseline(r) - 1e-15

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            cluster_purity([0, 1], [0])
