from __future__ import annotations

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from distreg.embeddings import MeanLinear, MeanRFF, SlicedWasserstein
from distreg.exceptions import DegenerateTargetError
from distreg.experiments import reporting
from distreg.experiments.bias import run_bias_probe
from distreg.experiments.ecological import EcoSettings, run_ecological_experiment
from distreg.experiments.gmm import CVConfig, run_gmm_experiment
from distreg.experiments.rate import resolve_lambda, run_rate_experiment
from distreg.experiments.scoring import (
    ScoreReport,
    explained_variance,
    fit_loglog,
    mean_absolute_error,
)
from distreg.experiments.truth import Gaussian, GaussianMeanTask, Uniform1D, truth_embedding

finite = st.floats(-1e3, 1e3, allow_nan=False)


def report_bytes(report, tmp_path, name):
    paths = reporting.write_report(report, tmp_path / name, "report")
    return [p.read_bytes() for p in paths]


class TestScoring:
    def test_examples(self):
        y = np.array([0.3, 1.0, -2.0])
        assert explained_variance(y, y) == 1.0
        assert explained_variance(y, np.full(3, y.mean())) == 0.0
        assert explained_variance([0.0, 2.0], [1.0, 1.0]) == 0.0

    def test_degenerate_targets(self):
        with pytest.raises(DegenerateTargetError):
            explained_variance([1.0, 1.0], [0.0, 2.0])
        with pytest.raises(ValueError):
            explained_variance([1.0], [1.0, 2.0])

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, st.integers(2, 30), elements=finite))
    def test_constant_mean_predictor_is_zero(self, y):
        # tiny spreads underflow when squared and are rejected as degenerate
        assume(np.ptp(y) > 1e-100)
        assert explained_variance(y, np.full(y.size, y.mean())) == 0.0

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, 10, elements=finite), arrays(np.float64, 10, elements=finite))
    def test_at_most_one(self, y, p):
        assume(np.ptp(y) > 1e-3)
        assert explained_variance(y, p) <= 1.0

    def test_shifted_predictions_score_one(self):
        y = np.array([1.0, 2.0, 4.0])
        assert explained_variance(y, y + 5.0) == pytest.approx(1.0, abs=1e-15)

    def test_mae(self):
        assert mean_absolute_error([0.0, 1.0], [1.0, -1.0]) == 1.5

    def test_score_report_skips_degenerate(self):
        r = ScoreReport((0.5, float("nan"), 0.7), (0.1, 0.2, 0.3), seed=0)
        assert r.explained_variance == pytest.approx(0.6)
        assert r.n_degenerate == 1 and not r.degenerate
        assert ScoreReport((float("nan"),), (0.0,), seed=0).degenerate

    def test_loglog_slope(self):
        x = np.array([1.0, 2.0, 8.0, 64.0])
        fit = fit_loglog(x, 3.0 * x**-0.5)
        assert fit.slope == pytest.approx(-0.5, abs=1e-12)
        assert fit.intercept == pytest.approx(np.log2(3.0), abs=1e-12)
        with pytest.raises(ValueError), np.errstate(divide="ignore"):
            fit_loglog([1.0, 2.0], [1.0, 0.0])


class TestTruth:
    @pytest.mark.parametrize(
        "law", [Uniform1D(-1.0, 2.0), Gaussian([0.5], [[0.3]]), Gaussian([1.0, -1.0], [[1.0, 0.3], [0.3, 0.5]])],
        ids=["uniform", "gauss1d", "gauss2d"],
    )
    @pytest.mark.parametrize(
        "cfg", [MeanLinear(), MeanRFF(16, 0.8, seed=1), SlicedWasserstein(3, 8, 0.1, seed=2)],
        ids=lambda c: c.kind,
    )
    def test_analytic_matches_large_sample(self, law, cfg):
        exact, source = truth_embedding(cfg, law)
        assert source == "analytic"
        sampled = cfg.coords(law.sample(np.random.default_rng(0), 2**18))
        np.testing.assert_allclose(exact, sampled, atol=0.02)

    def test_linear_term_centered(self):
        cfg = SlicedWasserstein(1, 5, 0.1)
        law = Uniform1D()
        rng = np.random.default_rng(1)
        A = np.array([law.linear_term(cfg, law.sample(rng, 50)) for _ in range(4000)])
        se = A.std(axis=0) / np.sqrt(len(A))
        assert np.all(np.abs(A.mean(axis=0)) < 4 * se)
        assert law.linear_term(MeanLinear(), law.sample(rng, 5)) is None

    def test_linear_term_is_first_order(self):
        # x_N - x - a_N is much smaller than x_N - x for large N
        cfg = SlicedWasserstein(2, 10, 0.1, seed=0)
        law = Gaussian([0.0, 1.0], [[1.0, 0.2], [0.2, 0.8]])
        pts = law.sample(np.random.default_rng(2), 2**16)
        D = cfg.coords(pts) - law.embedding_coords(cfg)
        R = D - law.linear_term(cfg, pts)
        assert np.abs(R).max() < 0.2 * np.abs(D).max()

    def test_gaussian_mean_task_labels(self):
        task = GaussianMeanTask()
        rng = np.random.default_rng(0)
        for _ in range(50):
            law, y = task.draw(rng)
            assert -1.0 <= y <= 1.0
            assert y == np.clip(law.mean[0], -1, 1)


class TestRate:
    def test_exact_embeddings_give_zero(self):
        rep = run_rate_experiment(MeanLinear(), n_grid=(8, 16), N_grid=(32, 64), R=3, exact_only=True)
        assert all(d == 0.0 for c in rep.cells for d in c.distances)

    def test_distances_non_negative_and_decreasing(self):
        rep = run_rate_experiment(MeanLinear(), n_grid=(16,), N_grid=(16, 1024), R=10, seed=3)
        assert all(d >= 0 for c in rep.cells for d in c.distances)
        assert rep.cell(16, 1024).mean < rep.cell(16, 16).mean
        assert rep.slope_N[16] < 0

    def test_doubling_lambda_does_not_increase_distance(self):
        a = run_rate_experiment(MeanLinear(), n_grid=(32,), N_grid=(256,), lambda_rule=0.1, R=30, seed=1)
        b = run_rate_experiment(MeanLinear(), n_grid=(32,), N_grid=(256,), lambda_rule=0.2, R=30, seed=1)
        ca, cb = a.cells[0], b.cells[0]
        band = 2 * np.hypot(ca.std, cb.std) / np.sqrt(30)
        assert cb.mean <= ca.mean + band

    def test_joint_slope_along_proportional_grid(self):
        rep = run_rate_experiment(MeanLinear(), n_grid=(8, 32), N_grid=(8, 32), R=4, seed=0)
        assert rep.slope_joint is not None and rep.slope_joint < 0

    def test_lambda_rule(self):
        assert resolve_lambda(0.5, 3, 4) == 0.5
        assert resolve_lambda(lambda n, N: 1.0 / n, 4, 9) == 0.25
        with pytest.raises(ValueError):
            resolve_lambda(0.0, 1, 1)

    def test_deterministic_across_threads(self, tmp_path):
        kw = dict(n_grid=(8,), N_grid=(16, 32), R=4, seed=5)
        a = run_rate_experiment(MeanRFF(8, seed=1), threads=1, **kw)
        b = run_rate_experiment(MeanRFF(8, seed=1), threads=3, **kw)
        assert report_bytes(a, tmp_path, "a") == report_bytes(b, tmp_path, "b")


class TestGmm:
    CFGS = {"mean": MeanLinear(), "sw": SlicedWasserstein(4, 5, 0.0, seed=0)}
    CV = CVConfig(lambda_grid=(0.01, 1.0), scale_grid=(1.0, 10.0), folds=3)

    def test_single_mode_is_degenerate(self):
        rep = run_gmm_experiment([(12, 8)], self.CFGS, self.CV, C=1, replicates=2)
        for c in rep.cells:
            assert c.scores.degenerate and np.isnan(c.scores.explained_variance)
        assert rep.summary()["cells"][0]["degenerate"] is True

    def test_same_data_for_every_embedding(self):
        rep = run_gmm_experiment([(20, 8)], self.CFGS, self.CV, replicates=2, seed=3)
        seeds = [c.scores.extra["task_seeds"] for c in rep.cells]
        assert seeds[0] == seeds[1]

    def test_select_once_reuses_hyperparameters(self):
        rep = run_gmm_experiment([(20, 8)], self.CFGS, self.CV, replicates=3, select_once=True)
        for c in rep.cells:
            assert len(set(zip(c.lambdas, c.scales))) == 1

    def test_deterministic_across_threads(self, tmp_path):
        kw = dict(grid=[(16, 8), (24, 8)], embedding_cfgs=self.CFGS, cv_cfg=self.CV, replicates=2, seed=2)
        a = run_gmm_experiment(threads=1, **kw)
        b = run_gmm_experiment(threads=2, **kw)
        assert report_bytes(a, tmp_path, "a") == report_bytes(b, tmp_path, "b")

    def test_rejects_tiny_cells(self):
        with pytest.raises(ValueError):
            run_gmm_experiment([(2, 8)], self.CFGS, self.CV)


class TestBiasProbe:
    def test_mean_linear_unbiased(self):
        rep = run_bias_probe(MeanLinear(), Uniform1D(), N_grid=(16, 64, 256), replicates=500, seed=0)
        assert rep.within_stderr(3.0)
        assert not rep.control_variate
        assert all(s > 0 for r in rep.rows for s in r.stderr)

    def test_stderr_shrinks_with_replicates(self):
        kw = dict(N_grid=(32, 128), seed=4)
        base = run_bias_probe(MeanLinear(), Uniform1D(), replicates=400, **kw)
        more = run_bias_probe(MeanLinear(), Uniform1D(), replicates=1600, **kw)
        for r0, r1 in zip(base.rows, more.rows):
            for s0, s1 in zip(r0.stderr, r1.stderr):
                assert 0.4 <= s1 / s0 <= 0.6

    def test_sw_uses_control_variate(self):
        rep = run_bias_probe(SlicedWasserstein(1, 10, 0.1), Uniform1D(), N_grid=(64, 256), replicates=200)
        assert rep.control_variate
        plain = run_bias_probe(SlicedWasserstein(1, 10, 0.1), Uniform1D(), N_grid=(64, 256),
                               replicates=200, control_variate=False)
        # same deviations, so the rms is unchanged while the bias stderr drops
        assert [r.rms for r in rep.rows] == [r.rms for r in plain.rows]
        assert rep.rows[0].stderr[0] < plain.rows[0].stderr[0]

    def test_probe_vector_validation(self):
        with pytest.raises(ValueError):
            run_bias_probe(MeanLinear(), Uniform1D(), N_grid=(8,), replicates=10, probe_vectors=[[1.0, 2.0]])

    def test_deterministic_across_threads(self, tmp_path):
        kw = dict(N_grid=(16, 32), replicates=250, seed=9)
        a = run_bias_probe(MeanRFF(4, seed=0), Uniform1D(), threads=1, **kw)
        b = run_bias_probe(MeanRFF(4, seed=0), Uniform1D(), threads=3, **kw)
        assert report_bytes(a, tmp_path, "a") == report_bytes(b, tmp_path, "b")


class TestEcological:
    SETTINGS = EcoSettings(n_train=20, n_test=20, N=30, num_directions=5,
                           lambda_grid=(1e-3, 1e-1), scale_grid=(1.0, 3.0), n_splits=3)

    def test_small_run(self):
        rep = run_ecological_experiment((3, 4), steps=2, settings=self.SETTINGS, probe_d=3, seed=1)
        assert set(rep.scores) == {3, 4}
        effects = [s.effects for s in rep.steps if s.effects is not None]
        assert len(effects) == 2 and effects[0].shape == (3, 20)
        assert len(rep.feature_medians()) == 2
        summary = rep.summary()
        assert summary["feature_probe"]["steps"] == 2

    def test_feature_probe_optional(self):
        rep = run_ecological_experiment((2, 3), steps=1, settings=self.SETTINGS, probe_d=None, seed=0)
        assert rep.probe_d is None

    def test_deterministic_across_threads(self, tmp_path):
        kw = dict(d_grid=(2, 3), steps=2, settings=self.SETTINGS, probe_d=2, seed=4)
        a = run_ecological_experiment(threads=1, **kw)
        b = run_ecological_experiment(threads=2, **kw)
        assert report_bytes(a, tmp_path, "a") == report_bytes(b, tmp_path, "b")

    def test_rejects_one_dimension(self):
        with pytest.raises(ValueError):
            run_ecological_experiment((1,), steps=1, settings=self.SETTINGS)


class TestReporting:
    def test_float_format_and_nan(self, tmp_path):
        path = reporting.write_csv(tmp_path / "x.csv", ["a", "b", "c"], [(0.1, 3, True), (float("nan"), None, "s")])
        assert path.read_text() == "a,b,c\n0.10000000000000001,3,true\nnan,,s\n"
        text = reporting.dumps({"x": float("nan"), "y": np.float64(0.1), "z": np.arange(2)})
        assert '"x": null' in text and '"y": 0.1' in text
