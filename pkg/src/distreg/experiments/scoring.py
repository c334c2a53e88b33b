"""Evaluation scores and log-log slope fits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from distreg.exceptions import DegenerateTargetError


def _pair(y_true, y_pred) -> tuple[np.ndarray, np.ndarray]:
    y_true = np.asarray(y_true, dtype=np.float64).reshape(-1)
    y_pred = np.asarray(y_pred, dtype=np.float64).reshape(-1)
    if y_true.size == 0 or y_true.shape != y_pred.shape:
        raise ValueError(f"need equal non-zero lengths, got {y_true.size} and {y_pred.size}")
    return y_true, y_pred


def _centered(v: np.ndarray) -> np.ndarray:
    # a constant vector has no spread; avoid the rounding of its float mean
    if v.min() == v.max():
        return np.zeros_like(v)
    return v - v.mean()


def explained_variance(y_true, y_pred) -> float:
    """``1 - Var(y_pred - y_true) / Var(y_true)`` with population variances.

    Both vectors are centered separately before differencing, so the
    constant predictor gets exactly 0 and the perfect predictor exactly 1.
    """
    y_true, y_pred = _pair(y_true, y_pred)
    t = _centered(y_true)
    den = float(np.mean(t * t))
    if den == 0.0:
        raise DegenerateTargetError("explained variance is undefined for constant targets")
    e = t - _centered(y_pred)
    return 1.0 - float(np.mean(e * e)) / den


def mean_absolute_error(y_true, y_pred) -> float:
    y_true, y_pred = _pair(y_true, y_pred)
    return float(np.mean(np.abs(y_pred - y_true)))


@dataclass(frozen=True)
class ScoreReport:
    """Scores over replicates; NaN marks a replicate with degenerate targets."""

    per_replicate_ev: tuple[float, ...]
    per_replicate_mae: tuple[float, ...]
    seed: int
    extra: dict = field(default_factory=dict)

    def _valid_ev(self) -> np.ndarray:
        ev = np.array(self.per_replicate_ev, dtype=np.float64)
        return ev[~np.isnan(ev)]

    @property
    def explained_variance(self) -> float:
        """Mean over non-degenerate replicates (NaN if there are none)."""
        ev = self._valid_ev()
        return float(ev.mean()) if ev.size else float("nan")

    @property
    def median_explained_variance(self) -> float:
        ev = self._valid_ev()
        return float(np.median(ev)) if ev.size else float("nan")

    @property
    def mean_absolute_error(self) -> float:
        return float(np.mean(self.per_replicate_mae))

    @property
    def n_degenerate(self) -> int:
        return int(np.isnan(self.per_replicate_ev).sum())

    @property
    def degenerate(self) -> bool:
        """True when no replicate had scorable targets."""
        return self.n_degenerate == len(self.per_replicate_ev)


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    stderr: float


def fit_loglog(x, y) -> SlopeFit:
    """Ordinary least squares of ``log2 y`` on ``log2 x``."""
    lx = np.log2(np.asarray(x, dtype=np.float64))
    ly = np.log2(np.asarray(y, dtype=np.float64))
    if lx.size < 2 or lx.shape != ly.shape:
        raise ValueError("need at least two matching points for a slope")
    if not np.all(np.isfinite(ly)):
        raise ValueError("log-log fit needs strictly positive values")
    A = np.column_stack([lx, np.ones_like(lx)])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    dof = lx.size - 2
    if dof > 0:
        s2 = float(resid @ resid) / dof
        stderr = float(np.sqrt(s2 / np.sum((lx - lx.mean()) ** 2)))
    else:
        stderr = 0.0
    return SlopeFit(float(coef[0]), float(coef[1]), stderr)
