"""Mode-count regression on random Gaussian mixtures over an ``(n, N)`` grid."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from distreg._parallel import parallel_map
from distreg._seeding import child_rng, child_seed
from distreg.distributions import GmmTaskConfig, sample_gmm_task
from distreg.embeddings import embed_many
from distreg.exceptions import DegenerateTargetError
from distreg.experiments.scoring import ScoreReport, explained_variance, mean_absolute_error
from distreg.kernel_ridge import KernelConfig, cross_validate, fit, predict_many

DEFAULT_LAMBDA_GRID = (1e-2, 1e-1, 1.0, 10.0, 100.0)
DEFAULT_SCALE_GRID = tuple(float(s) for s in np.logspace(-1, 2, 7))


@dataclass(frozen=True)
class CVConfig:
    lambda_grid: tuple = DEFAULT_LAMBDA_GRID
    scale_grid: tuple = DEFAULT_SCALE_GRID
    folds: int | None = 5
    n_splits: int = 10
    holdout: float = 0.2

    def to_dict(self) -> dict:
        return {
            "lambda_grid": list(self.lambda_grid),
            "scale_grid": list(self.scale_grid),
            "folds": self.folds,
            "n_splits": self.n_splits,
            "holdout": self.holdout,
        }

    def run(self, embeddings, labels, seed: int):
        return cross_validate(
            embeddings, labels, self.lambda_grid, self.scale_grid,
            folds=self.folds, seed=seed, n_splits=self.n_splits, holdout=self.holdout,
        )


@dataclass(frozen=True)
class GmmCell:
    embedding: str
    n: int
    N: int
    scores: ScoreReport
    lambdas: tuple[float, ...]
    scales: tuple[float, ...]


@dataclass(frozen=True)
class GmmReport:
    cells: tuple[GmmCell, ...]
    d: int
    C: int
    replicates: int
    seed: int
    select_once: bool
    cv: dict
    embeddings: dict = field(default_factory=dict)

    def cell(self, embedding: str, n: int, N: int) -> GmmCell:
        for c in self.cells:
            if (c.embedding, c.n, c.N) == (embedding, n, N):
                return c
        raise KeyError((embedding, n, N))

    def mean_ev(self, embedding: str, n: int, N: int) -> float:
        return self.cell(embedding, n, N).scores.explained_variance

    def csv_table(self):
        header = ["embedding", "n", "N", "replicate", "explained_variance",
                  "mean_absolute_error", "lambda", "length_scale"]
        rows = []
        for c in self.cells:
            s = c.scores
            for r in range(len(s.per_replicate_ev)):
                rows.append((c.embedding, c.n, c.N, r, s.per_replicate_ev[r],
                             s.per_replicate_mae[r], c.lambdas[r], c.scales[r]))
        return header, rows

    def summary(self) -> dict:
        return {
            "experiment": "gmm",
            "d": self.d,
            "C": self.C,
            "seed": self.seed,
            "replicates": self.replicates,
            "select_once": self.select_once,
            "cv": self.cv,
            "embeddings": self.embeddings,
            "cells": [
                {
                    "embedding": c.embedding, "n": c.n, "N": c.N,
                    "mean_explained_variance": c.scores.explained_variance,
                    "mean_absolute_error": c.scores.mean_absolute_error,
                    "degenerate": c.scores.degenerate,
                    "degenerate_replicates": c.scores.n_degenerate,
                    "replicate_seeds": c.scores.extra.get("task_seeds", []),
                }
                for c in self.cells
            ],
        }


def _prepare(d, C, n, N, r, seed, names, cfgs):
    task_seed = child_seed(seed, n, N, r)
    ds = sample_gmm_task(GmmTaskConfig(d, C, n, N, seed=task_seed))
    perm = child_rng(seed, n, N, r, 1).permutation(n)
    half = n // 2
    tr, te = np.sort(perm[:half]), np.sort(perm[half:])
    emb = {name: embed_many(cfgs[name], ds.distributions) for name in names}
    return task_seed, ds.labels, tr, te, emb


def _score(labels, tr, te, E, lam, scale):
    model = fit([E[i] for i in tr], labels[tr], lam, KernelConfig(scale))
    pred = predict_many(model, [E[i] for i in te])
    try:
        ev = explained_variance(labels[te], pred)
    except DegenerateTargetError:
        ev = float("nan")
    return ev, mean_absolute_error(labels[te], pred)


def run_gmm_experiment(
    grid: Sequence[tuple[int, int]],
    embedding_cfgs: Mapping,
    cv_cfg: CVConfig | None = None,
    d: int = 2,
    C: int = 2,
    replicates: int = 5,
    seed: int = 0,
    select_once: bool = True,
    threads: int = 1,
) -> GmmReport:
    """Train on half of each generated task, score explained variance on the other half.

    All embeddings see the same datasets and splits. With ``select_once``
    the hyperparameters chosen by CV on replicate 0 of a cell are reused for
    its later replicates; otherwise CV runs on every replicate. Splits and
    data are redrawn for each replicate.
    """
    cv_cfg = cv_cfg or CVConfig()
    names = list(embedding_cfgs)
    if not grid or not names or replicates < 1:
        raise ValueError("need a non-empty grid, at least one embedding and replicates >= 1")
    grid = [(int(n), int(N)) for n, N in grid]
    for n, _ in grid:
        if n < 4:
            raise ValueError("each cell needs n >= 4 to split and cross-validate")

    def run_cell(nN):
        n, N = nN
        out = {name: ([], [], [], []) for name in names}
        chosen: dict[str, tuple[float, float]] = {}
        seeds = []
        for r in range(replicates):
            task_seed, y, tr, te, emb = _prepare(d, C, n, N, r, seed, names, embedding_cfgs)
            seeds.append(task_seed)
            for name in names:
                E = emb[name]
                if name not in chosen or not select_once:
                    cv = cv_cfg.run([E[i] for i in tr], y[tr], child_seed(seed, n, N, r, 2))
                    chosen[name] = (cv.best_lambda, cv.best_scale)
                lam, scale = chosen[name]
                ev, mae = _score(y, tr, te, E, lam, scale)
                for lst, v in zip(out[name], (ev, mae, lam, scale)):
                    lst.append(v)
        return [
            GmmCell(name, n, N,
                    ScoreReport(tuple(out[name][0]), tuple(out[name][1]), seed,
                                {"task_seeds": seeds}),
                    tuple(out[name][2]), tuple(out[name][3]))
            for name in names
        ]

    cells = [c for block in parallel_map(run_cell, grid, threads) for c in block]
    return GmmReport(
        cells=tuple(cells), d=d, C=C, replicates=replicates, seed=seed,
        select_once=select_once, cv=cv_cfg.to_dict(),
        embeddings={name: embedding_cfgs[name].to_dict() for name in names},
    )
