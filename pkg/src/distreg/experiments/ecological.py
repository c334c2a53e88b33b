"""Simulated ecological inference: vote shares from group covariate samples."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from distreg._parallel import parallel_map
from distreg._seeding import child_seed
from distreg.distributions import EcologicalTaskConfig, sample_ecological_task
from distreg.embeddings import SlicedWasserstein, embed_many
from distreg.experiments.scoring import ScoreReport, explained_variance, mean_absolute_error
from distreg.kernel_ridge import KernelConfig, cross_validate, fit, predict_many

DEFAULT_LAMBDA_GRID = tuple(float(v) for v in np.logspace(-8, 1, 100))
DEFAULT_SCALE_GRID = tuple(float(v) for v in np.logspace(-2, 2, 100))


@dataclass(frozen=True)
class EcoSettings:
    n_train: int = 100
    n_test: int = 200
    N: int = 200
    num_directions: int = 100
    num_quantiles: int = 10
    trim: float = 0.0
    lambda_grid: tuple = DEFAULT_LAMBDA_GRID
    scale_grid: tuple = DEFAULT_SCALE_GRID
    n_splits: int = 10
    holdout: float = 0.2

    def to_dict(self) -> dict:
        return {
            "n_train": self.n_train, "n_test": self.n_test, "N": self.N,
            "num_directions": self.num_directions, "num_quantiles": self.num_quantiles,
            "trim": self.trim, "lambda_grid": list(self.lambda_grid),
            "scale_grid": list(self.scale_grid), "n_splits": self.n_splits,
            "holdout": self.holdout,
        }


@dataclass(frozen=True)
class StepResult:
    d: int
    step: int
    ev: float
    mae: float
    lam: float
    scale: float
    effects: np.ndarray | None  # (d, n_train) array of Y+ - Y- when probed


@dataclass(frozen=True)
class EcoReport:
    d_grid: tuple[int, ...]
    scores: dict  # d -> ScoreReport
    steps: tuple[StepResult, ...]
    probe_d: int | None
    seed: int
    settings: dict

    def median_ev(self, d: int) -> float:
        return self.scores[d].median_explained_variance

    def feature_medians(self) -> list[np.ndarray]:
        """Per probed step, the median effect of each feature over training groups."""
        return [np.median(s.effects, axis=1) for s in self.steps if s.effects is not None]

    def feature_hits(self) -> int:
        """Steps where feature 1 has the largest and feature 2 the smallest median effect."""
        return sum(int(m.argmax() == 0 and m.argmin() == 1) for m in self.feature_medians())

    def csv_table(self):
        header = ["d", "step", "explained_variance", "mean_absolute_error", "lambda",
                  "length_scale"]
        maxk = max((s.effects.shape[0] for s in self.steps if s.effects is not None), default=0)
        header += [f"median_effect_{k + 1}" for k in range(maxk)]
        rows = []
        for s in self.steps:
            med = [] if s.effects is None else list(np.median(s.effects, axis=1))
            rows.append([s.d, s.step, s.ev, s.mae, s.lam, s.scale] + med + [""] * (maxk - len(med)))
        return header, rows

    def summary(self) -> dict:
        meds = self.feature_medians()
        return {
            "experiment": "ecological",
            "seed": self.seed,
            "settings": self.settings,
            "d_grid": list(self.d_grid),
            "median_explained_variance": {str(d): self.median_ev(d) for d in self.d_grid},
            "mean_explained_variance": {
                str(d): self.scores[d].explained_variance for d in self.d_grid
            },
            "feature_probe": None if self.probe_d is None else {
                "d": self.probe_d,
                "steps": len(meds),
                "hits": self.feature_hits(),
                "median_effects": [m.tolist() for m in meds],
            },
        }


def feature_effects(model, cfg, dists) -> np.ndarray:
    """``Y+ - Y-`` per feature and group, splitting each sample at the median of the feature.

    The upper half holds the ``N - N//2`` samples with the largest values of
    the feature (stable order on ties); both halves are embedded and scored
    by the full-data model.
    """
    d = dists[0].dim
    out = np.empty((d, len(dists)))
    for k in range(d):
        halves = []
        for dist in dists:
            X = dist.points
            order = np.argsort(X[:, k], kind="stable")
            h = X.shape[0] // 2
            halves += [X[order[h:]], X[order[:h]]]
        p = predict_many(model, embed_many(cfg, halves))
        out[k] = p[0::2] - p[1::2]
    return out


def _run_step(d, step, seed, st: EcoSettings, probe: bool) -> StepResult:
    # seeds depend on the step only, so every d sees the same random streams
    train = sample_ecological_task(EcologicalTaskConfig(d, st.n_train, st.N, child_seed(seed, step, 0)))
    test = sample_ecological_task(EcologicalTaskConfig(d, st.n_test, st.N, child_seed(seed, step, 1)))
    cfg = SlicedWasserstein(st.num_directions, st.num_quantiles, st.trim, seed=child_seed(seed, step, 2))
    Etr = embed_many(cfg, train.distributions)
    cv = cross_validate(Etr, train.labels, st.lambda_grid, st.scale_grid,
                        seed=child_seed(seed, step, 3), n_splits=st.n_splits, holdout=st.holdout)
    model = fit(Etr, train.labels, cv.best_lambda, KernelConfig(cv.best_scale))
    pred = predict_many(model, embed_many(cfg, test.distributions))
    effects = feature_effects(model, cfg, train.distributions) if probe else None
    return StepResult(d, step, explained_variance(test.labels, pred),
                      mean_absolute_error(test.labels, pred),
                      cv.best_lambda, cv.best_scale, effects)


def run_ecological_experiment(
    d_grid: Sequence[int] = (5, 10, 15, 20),
    steps: int = 10,
    settings: EcoSettings | None = None,
    probe_d: int | None = 5,
    seed: int = 0,
    threads: int = 1,
) -> EcoReport:
    """Sliced-Wasserstein KRR on simulated ecological tasks for each dimension ``d``.

    Each Monte Carlo step draws a training and a test task, selects
    ``(lambda, length scale)`` by CV on the training task, fits and scores
    explained variance on the test task. For ``d == probe_d`` the feature
    effect probe is also run on the training groups.
    """
    st = settings or EcoSettings()
    d_grid = tuple(int(d) for d in d_grid)
    if not d_grid or min(d_grid) < 2 or steps < 1:
        raise ValueError("need d >= 2 and steps >= 1")
    jobs = [(d, s) for d in d_grid for s in range(steps)]
    results = parallel_map(lambda j: _run_step(j[0], j[1], seed, st, j[0] == probe_d), jobs, threads)
    scores = {}
    for d in d_grid:
        rs = [r for r in results if r.d == d]
        scores[d] = ScoreReport(tuple(r.ev for r in rs), tuple(r.mae for r in rs), seed)
    return EcoReport(d_grid, scores, tuple(results),
                     probe_d if probe_d in d_grid else None, seed, st.to_dict())
