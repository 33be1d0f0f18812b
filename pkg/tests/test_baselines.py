import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from eegdg import baselines
from eegdg.errors import InsufficientDataError, ShapeError


class TestKnn:
    def test_mean_of_all_five(self):
        model = baselines.KnnModel(np.arange(5.0)[:, None],
                                   np.array([1.0, 2, 3, 4, 5]), k=5)
        assert baselines.knn_predict(model, np.array([100.0])) == 3.0

    def test_duplicated_point(self):
        X = np.tile([[1.0, 2.0]], (5, 1))
        model = baselines.KnnModel(X, np.full(5, 0.7), k=5)
        assert baselines.knn_predict(model, np.array([1.0, 2.0])) == 0.7

    def test_exhaustive_sort_oracle(self):
        for seed in range(200):
            rng = np.random.default_rng(seed)
            X = rng.normal(size=(20, 3))
            y = rng.uniform(size=20)
            q = rng.normal(size=3)
            model = baselines.KnnModel(X, y, k=5)
            got = baselines.knn_predict(model, q)
            d = np.linalg.norm(X - q, axis=1)
            expect = y[np.argsort(d, kind="stable")[:5]].mean()
            assert got == pytest.approx(expect, rel=1e-12)

    def test_tie_break_by_lowest_index(self):
        X = np.zeros((6, 1))  # all equidistant from any query
        y = np.array([1.0, 2, 3, 4, 5, 6])
        model = baselines.KnnModel(X, y, k=3)
        assert baselines.knn_predict(model, np.array([7.0])) == 2.0  # mean(1,2,3)

    def test_insufficient_data(self):
        model = baselines.KnnModel(np.zeros((3, 1)), np.zeros(3), k=5)
        with pytest.raises(InsufficientDataError):
            baselines.knn_predict(model, np.array([0.0]))

    def test_shape_error(self):
        model = baselines.KnnModel(np.zeros((5, 2)), np.zeros(5))
        with pytest.raises(ShapeError):
            baselines.knn_predict(model, np.zeros(3))

    def test_permutation_invariance(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(30, 4))
        y = rng.uniform(size=30)
        q = rng.normal(size=(5, 4))
        perm = rng.permutation(30)
        a = baselines.knn_predict(baselines.KnnModel(X, y, k=5), q)
        b = baselines.knn_predict(baselines.KnnModel(X[perm], y[perm], k=5), q)
        assert np.allclose(a, b)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(20, 2))
        y = rng.uniform(size=20)
        q = rng.normal(size=(4, 2))
        model = baselines.KnnModel(X, y, k=5)
        batch = baselines.knn_predict(model, q)
        singles = [baselines.knn_predict(model, row) for row in q]
        assert np.allclose(batch, singles)


class TestRidge:
    def test_exact_linear_unregularized(self):
        X = np.arange(1.0, 6.0)[:, None]
        y = 2.0 * X[:, 0] + 1.0
        model = baselines.ridge_fit(X, y, alpha_l2=0.0)
        assert model.weights[0] == pytest.approx(2.0)
        assert model.intercept == pytest.approx(1.0)

    def test_huge_alpha_shrinks_to_mean(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(20, 3))
        y = rng.uniform(size=20)
        model = baselines.ridge_fit(X, y, alpha_l2=1e12)
        assert np.all(np.abs(model.weights) < 1e-9)
        assert model.intercept == pytest.approx(y.mean(), abs=1e-6)

    def test_closed_form_alpha(self):
        model = baselines.ridge_fit(np.array([[1.0], [-1.0]]),
                                    np.array([1.0, -1.0]), alpha_l2=0.1)
        assert model.weights[0] == pytest.approx(2.0 / 2.1)
        assert model.intercept == pytest.approx(0.0, abs=1e-12)

    def test_singular_fallback(self):
        # duplicated column, alpha 0: solvable only via pseudo-inverse
        X = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
        y = np.array([2.0, 4.0, 6.0])
        model = baselines.ridge_fit(X, y, alpha_l2=0.0)
        pred = baselines.ridge_predict(model, X)
        assert np.allclose(pred, y, atol=1e-8)

    def test_training_loss_monotone_in_alpha(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(40, 5))
        y = rng.uniform(size=40)
        losses = []
        for alpha in (0.0, 0.1, 1.0, 10.0):
            m = baselines.ridge_fit(X, y, alpha_l2=alpha)
            r = y - baselines.ridge_predict(m, X)
            losses.append(float(r @ r))
        assert all(a <= b + 1e-12 for a, b in zip(losses, losses[1:]))

    def test_predict_zero_weights(self):
        model = baselines.RidgeModel(weights=np.zeros(3), intercept=0.4)
        assert baselines.ridge_predict(model, np.ones(3)) == 0.4

    def test_predict_linearity(self):
        rng = np.random.default_rng(0)
        model = baselines.ridge_fit(rng.normal(size=(10, 3)), rng.uniform(size=10))
        x1, x2 = rng.normal(size=3), rng.normal(size=3)
        lhs = baselines.ridge_predict(model, x1 + x2)
        rhs = (baselines.ridge_predict(model, x1)
               + baselines.ridge_predict(model, x2) - model.intercept)
        assert lhs == pytest.approx(rhs, rel=1e-10)

    def test_negative_alpha_rejected(self):
        with pytest.raises(ValueError):
            baselines.ridge_fit(np.zeros((3, 1)), np.zeros(3), alpha_l2=-1.0)

    def test_predict_shape_error(self):
        model = baselines.RidgeModel(weights=np.zeros(3), intercept=0.0)
        with pytest.raises(ShapeError):
            baselines.ridge_predict(model, np.zeros(4))

    @given(hst.integers(0, 1000))
    @settings(max_examples=25, deadline=None)
    def test_fit_is_deterministic(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(15, 4))
        y = rng.uniform(size=15)
        m1 = baselines.ridge_fit(X, y)
        m2 = baselines.ridge_fit(X, y)
        assert np.array_equal(m1.weights, m2.weights)
        assert m1.intercept == m2.intercept


class TestStandardization:
    def test_knn_standardize_matches_manual_oracle(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(20, 3)) * np.array([100.0, 1.0, 0.01])
        y = rng.uniform(size=20)
        q = rng.normal(size=3) * np.array([100.0, 1.0, 0.01])
        got = baselines.knn_predict(
            baselines.KnnModel(X, y, k=5, standardize=True), q)
        mean, std = X.mean(axis=0), X.std(axis=0)
        Xs, qs = (X - mean) / std, (q - mean) / std
        d = np.linalg.norm(Xs - qs, axis=1)
        expect = y[np.argsort(d, kind="stable")[:5]].mean()
        assert got == pytest.approx(expect, rel=1e-12)

    def test_ridge_standardize_roundtrip(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(30, 3)) * np.array([1.0, 100.0, 0.01])
        y = X @ np.array([0.5, 0.001, 10.0]) + 1.0
        m = baselines.ridge_fit(X, y, alpha_l2=0.0, standardize=True)
        assert np.allclose(baselines.ridge_predict(m, X), y, atol=1e-6)
