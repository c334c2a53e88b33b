"""Finite-dimensional Hilbertian embeddings of empirical distributions.

Each embedding maps a sample matrix to a coordinate vector together with
positive quadrature weights; the Hilbert norm is approximated by the
weighted Euclidean norm ``sqrt(sum_k w_k u_k^2)``.

* :class:`MeanLinear`: column means (mean embedding of the linear kernel).
* :class:`MeanRFF`: mean embedding of a Gaussian kernel via random Fourier features.
* :class:`SlicedWasserstein`: projected quantile functions on a direction x
  level grid, optionally trimmed to ``[trim, 1 - trim]``.
* :class:`Sinkhorn`: centered entropic-OT dual potential against a fixed
  discrete reference measure.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from distreg._parallel import parallel_map
from distreg._seeding import child_rng
from distreg.distributions import EmpiricalDistribution, format_float
from distreg.exceptions import (
    DataFormatError,
    DimensionMismatchError,
    FingerprintMismatchError,
    SinkhornConvergenceError,
)
from distreg.sinkhorn import DEFAULT_MAX_ITER, DEFAULT_REG, DEFAULT_TOL, solve_dual


def _as_points(dist) -> np.ndarray:
    if isinstance(dist, EmpiricalDistribution):
        return dist.points
    pts = np.asarray(dist, dtype=np.float64)
    return pts[:, None] if pts.ndim == 1 else pts


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# Configurations


@dataclass(frozen=True)
class MeanLinear:
    kind = "mean_linear"

    def to_dict(self) -> dict:
        return {"kind": self.kind}

    def weights(self, d: int) -> np.ndarray:
        return np.full(d, 1.0 / d)

    def coords(self, points: np.ndarray) -> np.ndarray:
        return points.mean(axis=0)


@dataclass(frozen=True)
class MeanRFF:
    num_features: int = 256
    bandwidth: float = 1.0
    seed: int = 0
    kind = "mean_rff"

    def __post_init__(self):
        if self.num_features < 1 or not self.bandwidth > 0:
            raise ValueError("MeanRFF needs num_features >= 1 and bandwidth > 0")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "num_features": int(self.num_features),
            "bandwidth": float(self.bandwidth),
            "seed": int(self.seed),
        }

    def features(self, d: int) -> tuple[np.ndarray, np.ndarray]:
        """Frequencies ``(m, d)`` drawn from N(0, I / bandwidth^2) and phases ``(m,)``."""
        rng = child_rng(self.seed, d)
        omega = rng.standard_normal((self.num_features, d)) / self.bandwidth
        phase = rng.uniform(0.0, 2.0 * np.pi, size=self.num_features)
        return omega, phase

    def weights(self, d: int) -> np.ndarray:
        return np.full(self.num_features, 1.0 / self.num_features)

    def coords(self, points: np.ndarray) -> np.ndarray:
        omega, phase = self.features(points.shape[1])
        return np.sqrt(2.0) * np.cos(points @ omega.T + phase).mean(axis=0)


@dataclass(frozen=True, eq=False)
class SlicedWasserstein:
    """Quantile functions of 1-D projections.

    Directions are shared by every distribution embedded with the same
    config: they come from ``seed`` (Gaussian vectors normalized to the
    sphere), or from ``directions`` when given explicitly. In dimension 1
    the single direction ``+1`` is used.
    """

    num_directions: int = 10
    num_quantiles: int = 10
    trim: float = 0.0
    seed: int = 0
    directions: np.ndarray | None = None
    kind = "sliced_wasserstein"

    def __post_init__(self):
        if self.num_quantiles < 1:
            raise ValueError("num_quantiles must be >= 1")
        if not 0.0 <= self.trim < 0.5:
            raise ValueError("trim must lie in [0, 1/2)")
        if self.directions is not None:
            dirs = np.atleast_2d(np.asarray(self.directions, dtype=np.float64))
            norms = np.linalg.norm(dirs, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-9):
                raise ValueError("explicit directions must have unit norm")
            object.__setattr__(self, "directions", _readonly(dirs))
            object.__setattr__(self, "num_directions", dirs.shape[0])
        elif self.num_directions < 1:
            raise ValueError("num_directions must be >= 1")

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "num_directions": int(self.num_directions),
            "num_quantiles": int(self.num_quantiles),
            "trim": float(self.trim),
            "seed": int(self.seed),
        }
        if self.directions is not None:
            out["directions"] = self.directions.tolist()
        return out

    def levels(self) -> np.ndarray:
        m, eps = self.num_quantiles, self.trim
        return eps + (np.arange(1, m + 1) - 0.5) * (1.0 - 2.0 * eps) / m

    def directions_for(self, d: int) -> np.ndarray:
        if self.directions is not None:
            if self.directions.shape[1] != d:
                raise DimensionMismatchError(
                    f"explicit directions live in R^{self.directions.shape[1]}, samples in R^{d}"
                )
            return self.directions
        if d == 1:
            return np.ones((1, 1))
        z = child_rng(self.seed, d).standard_normal((self.num_directions, d))
        return z / np.linalg.norm(z, axis=1, keepdims=True)

    def weights(self, d: int) -> np.ndarray:
        m = self.directions_for(d).shape[0] * self.num_quantiles
        return np.full(m, 1.0 / m)

    def coords(self, points: np.ndarray) -> np.ndarray:
        proj = np.sort(points @ self.directions_for(points.shape[1]).T, axis=0)
        idx = quantile_indices(points.shape[0], self.levels())
        # direction-major layout: coords[j * m_t + l] = F^{-1}_{theta_j}(t_l)
        return proj[idx, :].T.reshape(-1)


@dataclass(frozen=True, eq=False)
class Sinkhorn:
    reference_points: np.ndarray
    reference_weights: np.ndarray | None = None
    reg: float = DEFAULT_REG
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    kind = "sinkhorn"

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.reference_points, dtype=np.float64))
        if self.reference_weights is None:
            w = np.full(pts.shape[0], 1.0 / pts.shape[0])
        else:
            w = np.asarray(self.reference_weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != pts.shape[0]:
            raise ValueError("one reference weight per reference point is required")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("reference weights must be positive and sum to 1")
        if not (self.reg > 0 and self.tol > 0 and self.max_iter >= 1):
            raise ValueError("Sinkhorn needs reg > 0, tol > 0, max_iter >= 1")
        object.__setattr__(self, "reference_points", _readonly(pts))
        object.__setattr__(self, "reference_weights", _readonly(w))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "reference_points": self.reference_points.tolist(),
            "reference_weights": self.reference_weights.tolist(),
            "reg": float(self.reg),
            "tol": float(self.tol),
            "max_iter": int(self.max_iter),
        }

    def weights(self, d: int) -> np.ndarray:
        return np.array(self.reference_weights)

    def coords(self, points: np.ndarray) -> np.ndarray:
        if points.shape[1] != self.reference_points.shape[1]:
            raise DimensionMismatchError(
                f"reference measure lives in R^{self.reference_points.shape[1]}, "
                f"samples in R^{points.shape[1]}"
            )
        N = points.shape[0]
        sol = solve_dual(
            points, np.full(N, 1.0 / N), self.reference_points, self.reference_weights,
            reg=self.reg, tol=self.tol, max_iter=self.max_iter,
        )
        if not sol.converged:
            raise SinkhornConvergenceError(sol.residual, sol.iterations)
        return sol.g


EmbeddingConfig = Union[MeanLinear, MeanRFF, SlicedWasserstein, Sinkhorn]

_KINDS = {c.kind: c for c in (MeanLinear, MeanRFF, SlicedWasserstein, Sinkhorn)}


def config_from_dict(data: dict) -> EmbeddingConfig:
    data = dict(data)
    kind = data.pop("kind", None)
    if kind not in _KINDS:
        raise ValueError(f"unknown embedding kind {kind!r}; expected one of {sorted(_KINDS)}")
    cls = _KINDS[kind]
    allowed = set(cls.__dataclass_fields__)
    unknown = set(data) - allowed
    if unknown:
        raise ValueError(f"unknown keys for {kind}: {sorted(unknown)}")
    return cls(**data)


def _canonical(obj):
    if isinstance(obj, float):
        return format_float(obj)
    if isinstance(obj, dict):
        return {k: _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    return obj


def fingerprint(cfg: EmbeddingConfig) -> str:
    payload = json.dumps(_canonical(cfg.to_dict()), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def unit_ball_reference(n_points: int, d: int, seed: int = 0) -> np.ndarray:
    """``n_points`` i.i.d. uniform points in the unit ball of R^d."""
    rng = child_rng(seed, d)
    z = rng.standard_normal((n_points, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    r = rng.random(n_points) ** (1.0 / d)
    return z * r[:, None]


# ---------------------------------------------------------------------------
# Embedding vectors


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    coords: np.ndarray
    weights: np.ndarray
    fingerprint: str

    def __post_init__(self):
        c, w = _readonly(self.coords).reshape(-1), _readonly(self.weights).reshape(-1)
        if c.shape != w.shape:
            raise ValueError("coords and weights must have the same length")
        if not np.all(np.isfinite(c)):
            raise ValueError("embedding coordinates must be finite")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("embedding weights must be positive and sum to 1")
        object.__setattr__(self, "coords", c)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.coords.shape[0]


def quantile_indices(N: int, levels) -> np.ndarray:
    """0-based order-statistic index ``ceil(N t) - 1`` for each level ``t``.

    ``ceil`` is evaluated on the exact binary value of ``t`` so that levels
    like ``t = 0.5`` with even ``N`` land on the infimum, not one past it.
    """
    out = []
    for t in np.atleast_1d(levels):
        if not 0.0 < t < 1.0:
            raise ValueError(f"quantile level must lie in (0, 1), got {t}")
        out.append(max(math.ceil(Fraction(float(t)) * N), 1) - 1)
    return np.array(out, dtype=np.intp)


def empirical_quantile(sorted_samples, t: float) -> float:
    """``inf{x : G(x) >= t}`` for the empirical c.d.f. ``G`` of the sorted samples."""
    x = np.asarray(sorted_samples, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ValueError("need at least one sample")
    return float(x[quantile_indices(x.size, [t])[0]])


def embed(cfg: EmbeddingConfig, dist) -> EmbeddingVector:
    points = _as_points(dist)
    return EmbeddingVector(cfg.coords(points), cfg.weights(points.shape[1]), fingerprint(cfg))


def embed_many(cfg: EmbeddingConfig, dists: Sequence, threads: int = 1) -> list[EmbeddingVector]:
    """Embed each distribution; output order follows input order for any ``threads``."""
    return parallel_map(lambda d: embed(cfg, d), dists, threads)


def check_compatible(u: EmbeddingVector, v: EmbeddingVector) -> None:
    if u.fingerprint != v.fingerprint:
        raise FingerprintMismatchError(
            f"embeddings come from different configs ({u.fingerprint} vs {v.fingerprint})"
        )
    if u.coords.shape != v.coords.shape:
        raise DimensionMismatchError(f"embedding lengths differ: {len(u)} vs {len(v)}")


def embedding_distance(u: EmbeddingVector, v: EmbeddingVector) -> float:
    check_compatible(u, v)
    diff = u.coords - v.coords
    return float(np.sqrt(np.dot(u.weights, diff * diff)))


def stack(embeddings: Sequence[EmbeddingVector]) -> tuple[np.ndarray, np.ndarray, str]:
    """Coordinates as an ``(n, m)`` matrix plus the shared weights and fingerprint."""
    if len(embeddings) == 0:
        raise ValueError("no embeddings given")
    first = embeddings[0]
    for e in embeddings[1:]:
        check_compatible(first, e)
    return np.vstack([e.coords for e in embeddings]), first.weights, first.fingerprint


# ---------------------------------------------------------------------------
# CSV export

WEIGHTS_ROW = "#weights"


def write_embeddings_csv(path, group_ids: Sequence[str], embeddings: Sequence[EmbeddingVector], cfg=None) -> None:
    """Write a header, one weights row and one coordinate row per group.

    A sidecar ``<path>.fingerprint.json`` records the fingerprint (and the
    config when given).
    """
    coords, weights, fp = stack(embeddings)
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group_id"] + [f"e_{k + 1}" for k in range(coords.shape[1])])
        w.writerow([WEIGHTS_ROW] + [format_float(x) for x in weights])
        for gid, row in zip(group_ids, coords):
            w.writerow([gid] + [format_float(x) for x in row])
    side = {"fingerprint": fp}
    if cfg is not None:
        side["config"] = cfg.to_dict()
    Path(str(path) + ".fingerprint.json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")


def read_embeddings_csv(path) -> tuple[list[str], list[EmbeddingVector]]:
    path = Path(path)
    side = Path(str(path) + ".fingerprint.json")
    if not side.exists():
        raise DataFormatError(f"{side}: missing fingerprint sidecar")
    fp = json.loads(side.read_text())["fingerprint"]
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2 or rows[1][0] != WEIGHTS_ROW:
        raise DataFormatError(f"{path}: expected header and {WEIGHTS_ROW} row")
    weights = np.array([float(x) for x in rows[1][1:]])
    ids, out = [], []
    for line, row in enumerate(rows[2:], start=3):
        if len(row) != len(rows[0]):
            raise DataFormatError(f"{path}:{line}: expected {len(rows[0])} fields, found {len(row)}")
        ids.append(row[0])
        out.append(EmbeddingVector(np.array([float(x) for x in row[1:]]), weights, fp))
    return ids, out
