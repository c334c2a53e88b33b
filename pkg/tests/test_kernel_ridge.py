from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distreg.distributions import GmmTaskConfig, sample_gmm_task
from distreg.embeddings import EmbeddingVector, SlicedWasserstein, embed_many, embedding_distance
from distreg.exceptions import FactorizationError, FingerprintMismatchError
from distreg.experiments.scoring import explained_variance
from distreg.kernel_ridge import (
    KernelConfig,
    RidgeModel,
    cross_validate,
    cv_mse_table,
    cv_splits,
    fit,
    gram_matrix,
    kernel_value,
    load_model,
    pairwise_squared_distances,
    predict,
    predict_many,
    regularized_risk,
    rkhs_distance,
    save_model,
    solve_ridge,
)

FP = "test"


def vec(*coords, weights=None, fp=FP) -> EmbeddingVector:
    c = np.array(coords, dtype=float)
    w = np.full(c.size, 1.0 / c.size) if weights is None else np.asarray(weights)
    return EmbeddingVector(c, w, fp)


def random_embeddings(rng, n, m=3, spread=1.0):
    return [vec(*(spread * rng.standard_normal(m))) for _ in range(n)]


def naive_fit_predict(train, y, lam, scale, queries):
    """Dense oracle: explicit double loop for the Gram matrix and a generic solve."""
    n = len(train)
    G = np.array([[kernel_value(KernelConfig(scale), u, v) for v in train] for u in train])
    alpha = np.linalg.solve(G + n * lam * np.eye(n), y)
    K = np.array([[kernel_value(KernelConfig(scale), q, v) for v in train] for q in queries])
    return K @ alpha


class TestKernel:
    def test_examples(self):
        u = vec(0.0)
        assert kernel_value(KernelConfig(), u, u) == 1.0
        # weights (1,) so the distance is |difference|
        assert kernel_value(KernelConfig(2.0), u, vec(2.0)) == pytest.approx(np.exp(-1), rel=1e-15)
        assert kernel_value(KernelConfig(1.0), u, vec(2.0)) == pytest.approx(0.0183156, abs=1e-7)

    def test_mismatch(self):
        with pytest.raises(FingerprintMismatchError):
            kernel_value(KernelConfig(), vec(0.0), vec(0.0, fp="other"))

    def test_invalid_scale(self):
        for bad in (0.0, -1.0, np.inf, np.nan):
            with pytest.raises(ValueError):
                KernelConfig(bad)

    def test_gram_basics(self):
        G = gram_matrix(KernelConfig(), random_embeddings(np.random.default_rng(0), 7))
        np.testing.assert_array_equal(np.diag(G), np.ones(7))
        np.testing.assert_array_equal(G, G.T)
        np.testing.assert_array_equal(gram_matrix(KernelConfig(), [vec(1.0, 2.0)] * 2), np.ones((2, 2)))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 12), st.integers(1, 5), st.floats(0.05, 20.0), st.integers(0, 10**6))
    def test_gram_psd(self, n, m, scale, seed):
        G = gram_matrix(KernelConfig(scale), random_embeddings(np.random.default_rng(seed), n, m))
        assert np.linalg.eigvalsh(G).min() >= -1e-10


class TestFit:
    def test_single_item(self):
        model = fit([vec(1.0, 2.0)], [2.0], 0.5)
        assert abs(model.alpha[0] - 4.0 / 3.0) <= 1e-12
        assert abs(predict(model, vec(1.0, 2.0)) - 4.0 / 3.0) <= 1e-12

    def test_two_identical_items(self):
        e = vec(0.5, -0.5)
        model = fit([e, e], [1.0, 1.0], 0.5)
        np.testing.assert_allclose(model.alpha, [1 / 3, 1 / 3], atol=1e-12, rtol=0)
        assert abs(predict(model, e) - 2.0 / 3.0) <= 1e-12

    @pytest.mark.parametrize("seed", range(5))
    def test_dense_oracle(self, seed):
        rng = np.random.default_rng(seed)
        train, queries = random_embeddings(rng, 16, 4), random_embeddings(rng, 5, 4)
        y = rng.standard_normal(16)
        lam, scale = 10 ** rng.uniform(-3, 0), 10 ** rng.uniform(-0.5, 0.5)
        model = fit(train, y, lam, KernelConfig(scale))
        got = predict_many(model, queries + train)
        want = naive_fit_predict(train, y, lam, scale, queries + train)
        np.testing.assert_allclose(got, want, atol=1e-8, rtol=0)

    def test_normal_equations_residual(self):
        rng = np.random.default_rng(1)
        train, y = random_embeddings(rng, 30), 5 * rng.standard_normal(30)
        model = fit(train, y, 1e-3)
        G = gram_matrix(KernelConfig(), train)
        r = (G + 30 * 1e-3 * np.eye(30)) @ model.alpha - y
        assert np.abs(r).max() <= 1e-8 * (1 + np.abs(y).max())

    def test_near_interpolation(self):
        train = [vec(float(3 * i), float(-2 * i)) for i in range(10)]
        y = np.random.default_rng(2).standard_normal(10)
        model = fit(train, y, 1e-8)
        assert np.abs(predict_many(model, train) - y).max() < 1e-4

    def test_local_minimality(self):
        rng = np.random.default_rng(3)
        train, y = random_embeddings(rng, 8), rng.standard_normal(8)
        model = fit(train, y, 0.05)
        best = regularized_risk(model, train, y)
        for k in range(8):
            for delta in (1e-3, -1e-3):
                alpha = model.alpha.copy()
                alpha[k] += delta
                assert regularized_risk(model, train, y, alpha) >= best

    def test_far_query_decays(self):
        model = fit([vec(0.0)], [3.0], 0.1)
        assert abs(predict(model, vec(10.0))) <= np.abs(model.alpha).sum() * np.exp(-100)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(4)
        train, y, q = random_embeddings(rng, 9), rng.standard_normal(9), random_embeddings(rng, 3)
        perm = rng.permutation(9)
        a = predict_many(fit(train, y, 0.1), q)
        b = predict_many(fit([train[i] for i in perm], y[perm], 0.1), q)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            fit([], [], 1.0)
        with pytest.raises(ValueError):
            fit([vec(0.0)], [1.0], 0.0)
        with pytest.raises(ValueError):
            fit([vec(0.0)], [1.0, 2.0], 1.0)
        with pytest.raises(FingerprintMismatchError):
            predict(fit([vec(0.0)], [1.0], 1.0), vec(0.0, fp="other"))

    def test_solve_ridge_jitter(self):
        G = np.diag([1.0, -5e-10])
        alpha = solve_ridge(G, np.array([1.0, 1.0]), 0.0)
        assert np.all(np.isfinite(alpha))
        with pytest.raises(FactorizationError):
            solve_ridge(-np.eye(2), np.ones(2), 0.0)

    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        model = fit(random_embeddings(rng, 6), rng.standard_normal(6), 0.37, KernelConfig(1.7))
        path = tmp_path / "model.json"
        save_model(model, path)
        doc = json.loads(path.read_text())
        assert set(doc) == {"kernel", "lambda", "fingerprint", "embeddings", "weights", "alpha"}
        assert doc["kernel"] == {"length_scale": 1.7}
        back = load_model(path)
        np.testing.assert_array_equal(back.alpha, model.alpha)
        np.testing.assert_array_equal(back.train_coords, model.train_coords)
        assert back.lam == model.lam and back.kernel == model.kernel
        assert isinstance(back, RidgeModel)


class TestRkhsDistance:
    def test_identical(self):
        rng = np.random.default_rng(0)
        model = fit(random_embeddings(rng, 10), rng.standard_normal(10), 0.1)
        assert rkhs_distance(model, model) == 0.0

    def test_singletons(self):
        u, v = vec(0.0), vec(1.0)
        a = RidgeModel(u.coords[None, :], u.weights, FP, KernelConfig(1.0), 1.0, np.array([1.0]))
        b = RidgeModel(v.coords[None, :], v.weights, FP, KernelConfig(1.0), 1.0, np.array([1.0]))
        assert embedding_distance(u, v) == 1.0
        assert rkhs_distance(a, b) == pytest.approx(np.sqrt(2 - 2 * np.exp(-1)), abs=1e-12)
        assert rkhs_distance(a, b) == pytest.approx(1.1243848, abs=1e-7)

    def test_scaling_and_symmetry(self):
        rng = np.random.default_rng(1)
        ta, tb = random_embeddings(rng, 6), random_embeddings(rng, 7)
        ya, yb = rng.standard_normal(6), rng.standard_normal(7)
        d = rkhs_distance(fit(ta, ya, 0.2), fit(tb, yb, 0.2))
        assert rkhs_distance(fit(tb, yb, 0.2), fit(ta, ya, 0.2)) == pytest.approx(d, rel=1e-12)
        d3 = rkhs_distance(fit(ta, -3 * ya, 0.2), fit(tb, -3 * yb, 0.2))
        assert d3 == pytest.approx(3 * d, rel=1e-10)

    def test_mismatch(self):
        a = fit([vec(0.0)], [1.0], 1.0)
        with pytest.raises(ValueError):
            rkhs_distance(a, fit([vec(0.0)], [1.0], 1.0, KernelConfig(2.0)))
        with pytest.raises(FingerprintMismatchError):
            rkhs_distance(a, fit([vec(0.0, fp="x")], [1.0], 1.0))


class TestCrossValidation:
    def test_single_pair(self):
        rng = np.random.default_rng(0)
        cv = cross_validate(random_embeddings(rng, 12), rng.standard_normal(12), [0.3], [2.0])
        assert (cv.best_lambda, cv.best_scale) == (0.3, 2.0)

    def test_constant_labels_tie_break(self):
        rng = np.random.default_rng(1)
        emb = [vec(*(10 * rng.standard_normal(2))) for _ in range(10)]
        # far-apart points and a tiny scale make every fit predict ~0 off the training set
        cv = cross_validate(emb, np.zeros(10), [1e-3, 1e-2, 1e-1], [0.01, 0.02], folds=5)
        assert np.all(cv.mse <= 1e-20)
        assert (cv.best_lambda, cv.best_scale) == (1e-1, 0.02)

    def test_table_matches_refits(self):
        rng = np.random.default_rng(2)
        emb, y = random_embeddings(rng, 20), rng.standard_normal(20)
        lams, scales = [1e-3, 1e-1, 1.0], [0.5, 2.0]
        splits = cv_splits(20, seed=3, folds=4)
        coords = np.vstack([e.coords for e in emb])
        table = cv_mse_table(pairwise_squared_distances(coords, emb[0].weights), y, lams, scales, splits)
        for i, lam in enumerate(lams):
            for j, scale in enumerate(scales):
                errs = []
                for tr, te in splits:
                    m = fit([emb[k] for k in tr], y[tr], lam, KernelConfig(scale))
                    errs.append(np.mean((predict_many(m, [emb[k] for k in te]) - y[te]) ** 2))
                assert table[i, j] == pytest.approx(np.mean(errs), rel=1e-8)

    def test_splits(self):
        for tr, te in cv_splits(10, seed=0, folds=3):
            assert len(np.intersect1d(tr, te)) == 0 and len(tr) + len(te) == 10
        random_splits = cv_splits(10, seed=0)
        assert len(random_splits) == 10 and all(len(te) == 2 for _, te in random_splits)
        a, b = cv_splits(10, seed=5), cv_splits(10, seed=5)
        for (t1, v1), (t2, v2) in zip(a, b):
            np.testing.assert_array_equal(t1, t2)
            np.testing.assert_array_equal(v1, v2)
        with pytest.raises(ValueError):
            cv_splits(3, seed=0, folds=5)

    def test_fewer_items_than_folds(self):
        with pytest.raises(ValueError):
            cross_validate(random_embeddings(np.random.default_rng(0), 3), [0.0, 1.0, 2.0], [1.0], folds=4)

    def test_gmm_selection_beats_worst_pair(self):
        ds = sample_gmm_task(GmmTaskConfig(d=2, C=2, n=128, N=128, seed=4))
        emb = embed_many(SlicedWasserstein(10, 10, 0.0, seed=0), ds.distributions)
        perm = np.random.default_rng(0).permutation(128)
        tr, te = perm[:64], perm[64:]
        lams, scales = [1e-2, 1e-1, 1.0, 10.0], [0.3, 1.0, 3.0, 10.0]
        cv = cross_validate([emb[i] for i in tr], ds.labels[tr], lams, scales, folds=5, seed=1)

        def test_mse(lam, scale):
            m = fit([emb[i] for i in tr], ds.labels[tr], lam, KernelConfig(scale))
            return np.mean((predict_many(m, [emb[i] for i in te]) - ds.labels[te]) ** 2)

        worst = max(test_mse(lam, s) for lam in lams for s in scales)
        assert test_mse(cv.best_lambda, cv.best_scale) <= worst

    def test_cv_model_scores(self):
        # sanity: on an easy task the CV-selected model explains most variance
        rng = np.random.default_rng(6)
        emb = [vec(x) for x in rng.uniform(-2, 2, 60)]
        y = np.array([np.sin(e.coords[0]) for e in emb])
        cv = cross_validate(emb[:40], y[:40], np.logspace(-6, 0, 7), [0.5, 1.0, 2.0])
        m = fit(emb[:40], y[:40], cv.best_lambda, KernelConfig(cv.best_scale))
        assert explained_variance(y[40:], predict_many(m, emb[40:])) > 0.99
