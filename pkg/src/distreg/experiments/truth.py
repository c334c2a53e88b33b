"""Ground-truth laws with exact embeddings.

A truth law can be sampled and, for the configurations where a closed form
exists, returns the exact embedding ``x_mu`` of the law itself. Otherwise
:func:`truth_embedding` falls back to embedding a large sample of size
``n0`` (``2**20`` by default) and says so in its ``source`` tag.

For sliced Wasserstein the laws also expose the first-order (Bahadur) term
of the empirical quantile error, ``-(G_N(q_t) - t) / f(q_t)``, which has
mean exactly zero and is used as a control variate by the bias probe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from distreg.embeddings import MeanLinear, MeanRFF, SlicedWasserstein

LARGE_SAMPLE_N0 = 2**20


def _bahadur_term(cfg: SlicedWasserstein, points, dirs, quantile, density) -> np.ndarray:
    """Linear term per (direction, level), direction-major like the SW coords."""
    t = cfg.levels()
    proj = np.sort(points @ dirs.T, axis=0)
    N = proj.shape[0]
    out = []
    for j in range(dirs.shape[0]):
        q = quantile(j, t)
        G = np.searchsorted(proj[:, j], q, side="right") / N
        out.append(-(G - t) / density(j, q))
    return np.concatenate(out)


@dataclass(frozen=True)
class Uniform1D:
    low: float = 0.0
    high: float = 1.0

    def __post_init__(self):
        if not self.high > self.low:
            raise ValueError("Uniform1D needs high > low")

    dim = 1

    def describe(self) -> dict:
        return {"law": "uniform", "low": self.low, "high": self.high}

    def sample(self, rng: np.random.Generator, N: int) -> np.ndarray:
        return rng.uniform(self.low, self.high, size=(N, 1))

    def _proj_bounds(self, theta: float) -> tuple[float, float]:
        a, b = theta * self.low, theta * self.high
        return min(a, b), max(a, b)

    def embedding_coords(self, cfg) -> np.ndarray | None:
        a, b = self.low, self.high
        if isinstance(cfg, MeanLinear):
            return np.array([0.5 * (a + b)])
        if isinstance(cfg, MeanRFF):
            omega, phase = cfg.features(1)
            w = omega[:, 0]
            mid, half = 0.5 * (a + b), 0.5 * (b - a)
            # E cos(w x + phase) = cos(w mid + phase) sin(w half) / (w half)
            return np.sqrt(2.0) * np.cos(w * mid + phase) * np.sinc(w * half / np.pi)
        if isinstance(cfg, SlicedWasserstein):
            t = cfg.levels()
            rows = []
            for theta in cfg.directions_for(1)[:, 0]:
                lo, hi = self._proj_bounds(theta)
                rows.append(lo + t * (hi - lo))
            return np.concatenate(rows)
        return None

    def linear_term(self, cfg, points: np.ndarray) -> np.ndarray | None:
        if not isinstance(cfg, SlicedWasserstein):
            return None
        dirs = cfg.directions_for(1)
        bounds = [self._proj_bounds(th) for th in dirs[:, 0]]
        return _bahadur_term(
            cfg, points, dirs,
            lambda j, t: bounds[j][0] + t * (bounds[j][1] - bounds[j][0]),
            lambda j, q: 1.0 / (bounds[j][1] - bounds[j][0]),
        )


@dataclass(frozen=True, eq=False)
class Gaussian:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        c = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        if c.shape != (m.size, m.size):
            raise ValueError("covariance must be d x d")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", c)
        object.__setattr__(self, "_chol", np.linalg.cholesky(c))

    @property
    def dim(self) -> int:
        return self.mean.size

    def describe(self) -> dict:
        return {"law": "gaussian", "mean": self.mean.tolist(), "cov": self.cov.tolist()}

    def sample(self, rng: np.random.Generator, N: int) -> np.ndarray:
        return self.mean + rng.standard_normal((N, self.dim)) @ self._chol.T

    def _proj(self, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        loc = dirs @ self.mean
        scale = np.sqrt(np.einsum("jd,de,je->j", dirs, self.cov, dirs))
        return loc, scale

    def embedding_coords(self, cfg) -> np.ndarray | None:
        if isinstance(cfg, MeanLinear):
            return self.mean.copy()
        if isinstance(cfg, MeanRFF):
            omega, phase = cfg.features(self.dim)
            quad = np.einsum("kd,de,ke->k", omega, self.cov, omega)
            return np.sqrt(2.0) * np.exp(-0.5 * quad) * np.cos(omega @ self.mean + phase)
        if isinstance(cfg, SlicedWasserstein):
            loc, scale = self._proj(cfg.directions_for(self.dim))
            z = norm.ppf(cfg.levels())
            return (loc[:, None] + scale[:, None] * z[None, :]).reshape(-1)
        return None

    def linear_term(self, cfg, points: np.ndarray) -> np.ndarray | None:
        if not isinstance(cfg, SlicedWasserstein):
            return None
        dirs = cfg.directions_for(self.dim)
        loc, scale = self._proj(dirs)
        return _bahadur_term(
            cfg, points, dirs,
            lambda j, t: loc[j] + scale[j] * norm.ppf(t),
            lambda j, q: norm.pdf((q - loc[j]) / scale[j]) / scale[j],
        )


def truth_embedding(cfg, law, rng: np.random.Generator | None = None, n0: int = LARGE_SAMPLE_N0):
    """Exact embedding coordinates of ``law`` and a tag naming their source."""
    coords = law.embedding_coords(cfg)
    if coords is not None:
        return coords, "analytic"
    if rng is None:
        raise ValueError("no closed form for this config; an rng is needed for the large-sample fallback")
    return cfg.coords(law.sample(rng, n0)), f"sample:{n0}"


@dataclass(frozen=True)
class GaussianMeanTask:
    """Random 1-D Gaussians labeled by their mean clipped to ``[-clip, clip]``."""

    mean_low: float = -2.0
    mean_high: float = 2.0
    std_low: float = 0.5
    std_high: float = 1.5
    clip: float = 1.0

    def describe(self) -> dict:
        return {
            "task": "gaussian_mean",
            "mean_low": self.mean_low,
            "mean_high": self.mean_high,
            "std_low": self.std_low,
            "std_high": self.std_high,
            "clip": self.clip,
        }

    def draw(self, rng: np.random.Generator) -> tuple[Gaussian, float]:
        m = rng.uniform(self.mean_low, self.mean_high)
        s = rng.uniform(self.std_low, self.std_high)
        return Gaussian([m], [[s * s]]), float(np.clip(m, -self.clip, self.clip))
