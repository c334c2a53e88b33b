"""Two-stage sampling error: distance between models fit on exact and sampled embeddings."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from distreg._parallel import parallel_map
from distreg._seeding import child_rng
from distreg.embeddings import EmbeddingVector, fingerprint
from distreg.experiments.scoring import fit_loglog
from distreg.experiments.truth import GaussianMeanTask, truth_embedding
from distreg.kernel_ridge import KernelConfig, fit, rkhs_distance

LambdaRule = Union[float, Callable[[int, int], float]]


def resolve_lambda(rule: LambdaRule, n: int, N: int) -> float:
    lam = float(rule(n, N)) if callable(rule) else float(rule)
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    return lam


@dataclass(frozen=True)
class RateCell:
    n: int
    N: int
    lam: float
    distances: tuple[float, ...]

    @property
    def mean(self) -> float:
        return float(np.mean(self.distances))

    @property
    def std(self) -> float:
        return float(np.std(self.distances, ddof=1)) if len(self.distances) > 1 else 0.0


@dataclass(frozen=True)
class RateReport:
    cells: tuple[RateCell, ...]
    slope_N: dict  # n -> slope of log mean distance vs log N
    slope_joint: float | None
    replicates: int
    seed: int
    truth: dict
    truth_source: str
    embedding: dict

    def cell(self, n: int, N: int) -> RateCell:
        for c in self.cells:
            if c.n == n and c.N == N:
                return c
        raise KeyError((n, N))

    def csv_table(self):
        header = ["n", "N", "lambda", "replicate", "rkhs_distance"]
        rows = [
            (c.n, c.N, c.lam, r, d) for c in self.cells for r, d in enumerate(c.distances)
        ]
        return header, rows

    def summary(self) -> dict:
        return {
            "experiment": "rate",
            "seed": self.seed,
            "replicates": self.replicates,
            "truth": self.truth,
            "truth_source": self.truth_source,
            "embedding": self.embedding,
            "grid": [
                {"n": c.n, "N": c.N, "lambda": c.lam, "mean": c.mean, "std": c.std}
                for c in self.cells
            ],
            "slope_N": {str(n): s for n, s in self.slope_N.items()},
            "slope_joint": self.slope_joint,
        }


def _joint_slope(cells: Sequence[RateCell]) -> float | None:
    """Slope vs log(nN) along the longest chain of cells with a common ratio N/n."""
    chains: dict[float, list[RateCell]] = {}
    for c in cells:
        chains.setdefault(c.N / c.n, []).append(c)
    best = max(chains.values(), key=lambda ch: (len({c.n for c in ch}), -ch[0].N / ch[0].n))
    if len({c.n for c in best}) < 2:
        return None
    return fit_loglog([c.n * c.N for c in best], [c.mean for c in best]).slope


def _replicate(cfg, sampler, n, N, r, lam, kernel, seed, n0, exact_only):
    # true laws depend on (n, r) only, so every N reuses them (common random numbers)
    law_rng = child_rng(seed, 0, n, r)
    fp = fingerprint(cfg)
    exact, sampled, labels, sources = [], [], [], set()
    for i in range(n):
        law, y = sampler.draw(law_rng)
        coords, src = truth_embedding(cfg, law, child_rng(seed, 2, n, r, i), n0)
        sources.add(src)
        w = cfg.weights(law.dim)
        x = EmbeddingVector(coords, w, fp)
        exact.append(x)
        if exact_only:
            sampled.append(x)
        else:
            pts = law.sample(child_rng(seed, 1, n, N, r, i), N)
            sampled.append(EmbeddingVector(cfg.coords(pts), w, fp))
        labels.append(y)
    f_n = fit(exact, labels, lam, kernel)
    f_nN = fit(sampled, labels, lam, kernel)
    return rkhs_distance(f_n, f_nN), sources


def run_rate_experiment(
    embedding_cfg,
    truth_sampler=None,
    n_grid: Sequence[int] = (64,),
    N_grid: Sequence[int] = (64, 256, 1024, 4096, 8192),
    lambda_rule: LambdaRule = 0.1,
    R: int = 50,
    seed: int = 0,
    length_scale: float = 1.0,
    threads: int = 1,
    n0: int | None = None,
    exact_only: bool = False,
) -> RateReport:
    """Mean RKHS distance between the fits on exact and on ``N``-sample embeddings.

    For every ``(n, N)`` cell and replicate, ``n`` laws and labels are drawn
    from ``truth_sampler``; ``f_n`` is fit on the exact embeddings and
    ``f_{n,N}`` on embeddings of ``N`` samples per law, with the same
    ``lambda`` and length scale. ``exact_only`` replaces the sampled
    embeddings with the exact ones (the ``N -> infinity`` proxy).
    """
    sampler = truth_sampler or GaussianMeanTask()
    if R < 1 or not n_grid or not N_grid:
        raise ValueError("need R >= 1 and non-empty grids")
    kernel = KernelConfig(length_scale)
    n0 = int(n0) if n0 else 2**20
    jobs = [
        (int(n), int(N), r, resolve_lambda(lambda_rule, int(n), int(N)))
        for n in n_grid for N in N_grid for r in range(R)
    ]
    results = parallel_map(
        lambda j: _replicate(embedding_cfg, sampler, j[0], j[1], j[2], j[3], kernel, seed, n0, exact_only),
        jobs, threads,
    )
    cells, sources = [], set()
    for k in range(0, len(jobs), R):
        n, N, _, lam = jobs[k]
        block = results[k:k + R]
        for _, s in block:
            sources |= s
        cells.append(RateCell(n, N, lam, tuple(d for d, _ in block)))

    slope_N = {}
    for n in dict.fromkeys(c.n for c in cells):
        row = [c for c in cells if c.n == n]
        if len(row) >= 2 and all(c.mean > 0 for c in row):
            slope_N[n] = fit_loglog([c.N for c in row], [c.mean for c in row]).slope
    slope_joint = None if exact_only else _joint_slope(cells)
    return RateReport(
        cells=tuple(cells),
        slope_N=slope_N,
        slope_joint=slope_joint,
        replicates=R,
        seed=seed,
        truth=sampler.describe(),
        truth_source=",".join(sorted(sources)),
        embedding=embedding_cfg.to_dict(),
    )
