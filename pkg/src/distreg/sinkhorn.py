"""Entropic optimal transport dual between a discrete measure and a reference.

The potentials ``(h, g)`` maximize

    sum_i a_i h_i + sum_k w_k g_k
        - reg * sum_{i,k} a_i w_k exp((h_i + g_k - c_ik) / reg),

with ``c_ik = |x_i - y_k|^2 / 2``. Sinkhorn's algorithm is exact block
coordinate ascent on this objective: the ``h`` update solves the first
block in closed form, the ``g`` update the second.

Potentials are always stored in the log domain. Between absorptions the
updates are carried out as multiplicative scalings of the stabilized kernel
``exp((h_i + g_k - c_ik) / reg)``, which gives the same iterates as the
log-sum-exp form at the cost of two matrix-vector products per iteration.
Whenever a scaling leaves a safe range (or a kernel row/column underflows
entirely) the step is redone with log-sum-exp and the scalings are absorbed
into the potentials.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.spatial.distance import cdist

DEFAULT_REG = 1e-1
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 2000

# Scalings are absorbed into the log potentials once they leave [1/B, B].
_ABSORB_BOUND = 1e50


@dataclass(frozen=True, eq=False)
class DualSolution:
    h: np.ndarray
    g: np.ndarray
    residual: float
    iterations: int
    converged: bool


def cost_matrix(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    return 0.5 * cdist(x, y, "sqeuclidean")


def center_potential(g: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Remove the weighted mean of ``g`` (fixes the dual's additive gauge)."""
    g = np.asarray(g, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if g.shape != weights.shape:
        raise ValueError(f"potential shape {g.shape} does not match weights {weights.shape}")
    return g - np.dot(weights, g)


def dual_objective(h, g, mu_points, mu_weights, ref_points, ref_weights, reg) -> float:
    h = np.asarray(h, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    a = np.asarray(mu_weights, dtype=np.float64)
    w = np.asarray(ref_weights, dtype=np.float64)
    C = cost_matrix(mu_points, ref_points)
    if C.shape != (h.size, g.size) or a.shape != h.shape or w.shape != g.shape:
        raise ValueError("inconsistent shapes for the dual objective")
    with np.errstate(over="ignore"):
        penalty = a @ np.exp((h[:, None] + g[None, :] - C) / reg) @ w
    return float(a @ h + w @ g - reg * penalty)


def _softmin(S: np.ndarray, log_w: np.ndarray, reg: float, axis: int) -> np.ndarray:
    """``-reg * log sum_k w_k exp(-S_k / reg)`` along ``axis``, shifted by the minimum."""
    m = S.min(axis=axis, keepdims=True)
    z = np.exp(-(S - m) / reg + np.expand_dims(log_w, 1 - axis))
    return np.squeeze(m, axis=axis) - reg * np.log(z.sum(axis=axis))


def _potentials(state, reg):
    h, g, u, v = state
    return h + reg * np.log(u), g + reg * np.log(v)


def _check_simplex(w: np.ndarray, name: str) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if w.size == 0 or np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise ValueError(f"{name} must be strictly positive and finite")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"{name} must sum to 1 (sum={w.sum():.17g})")
    return w


def solve_dual(
    mu_points,
    mu_weights,
    ref_points,
    ref_weights,
    reg: float = DEFAULT_REG,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    g0: np.ndarray | None = None,
    callback: Callable[[int, np.ndarray, np.ndarray], None] | None = None,
) -> DualSolution:
    """Run Sinkhorn iterations until the marginal violation is at most ``tol``.

    One iteration updates ``h`` then ``g``; after the ``g`` update the
    reference marginal is exact, so the residual is the sup-norm violation
    of the other marginal. ``g0`` initializes the reference potential (zero
    by default); ``h`` needs no initialization since it is updated first.

    The returned ``g`` is centered against ``ref_weights`` and ``h`` is
    shifted by the opposite constant, so ``h_i + g_k`` is unchanged. On
    non-convergence the best iterate seen is returned with
    ``converged=False``.

    ``callback(iteration, h, g)`` receives the uncentered potentials after
    every iteration.
    """
    if reg <= 0 or tol <= 0 or max_iter < 1:
        raise ValueError("reg and tol must be positive, max_iter >= 1")
    a = _check_simplex(mu_weights, "mu_weights")
    w = _check_simplex(ref_weights, "ref_weights")
    x = np.atleast_2d(np.asarray(mu_points, dtype=np.float64))
    y = np.atleast_2d(np.asarray(ref_points, dtype=np.float64))
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    if x.shape[0] != a.size or y.shape[0] != w.size:
        raise ValueError("weights must have one entry per atom")

    C = cost_matrix(x, y)
    log_a, log_w = np.log(a), np.log(w)
    g = np.zeros(w.size) if g0 is None else np.array(g0, dtype=np.float64).reshape(-1)
    if g.shape != w.shape:
        raise ValueError("g0 must have one entry per reference atom")

    best = None
    h = np.zeros(a.size)
    K = None  # stabilized kernel for the absorbed (h, g)
    u = v = Kwv = None
    lo, hi = 1.0 / _ABSORB_BOUND, _ABSORB_BOUND
    for it in range(1, max_iter + 1):
        stepped = False
        if K is not None:
            # scaling form: h_new = h + reg log u, g_new = g + reg log v
            if Kwv is None:
                Kwv = K @ (w * v)
            if Kwv.min() > 0.0 and Kwv.max() < np.inf:
                u_new = 1.0 / Kwv
                Ku = K.T @ (a * u_new)
                if Ku.min() > 0.0 and Ku.max() < np.inf:
                    u, v = u_new, 1.0 / Ku
                    Kwv = K @ (w * v)
                    residual = float(np.abs(a * u * Kwv - a).max())
                    state = (h, g, u, v)
                    if min(u.min(), v.min()) < lo or max(u.max(), v.max()) > hi:
                        h, g, K, Kwv = h + reg * np.log(u), g + reg * np.log(v), None, None
                    stepped = True
            if not stepped:
                # redo this iteration in the log domain from the last good scalings
                h, g, K, Kwv = h + reg * np.log(u), g + reg * np.log(v), None, None
        if not stepped:
            h = _softmin(C - g[None, :], log_w, reg, axis=1)
            g = _softmin(C - h[:, None], log_a, reg, axis=0)
            K = np.exp((h[:, None] + g[None, :] - C) / reg)
            u, v = np.ones(a.size), np.ones(w.size)
            Kwv = K @ w
            residual = float(np.abs(a * Kwv - a).max())
            state = (h, g, u, v)

        if callback is not None:
            callback(it, *_potentials(state, reg))
        if best is None or residual < best[0]:
            best = (residual, state)
        if residual <= tol:
            break

    residual, state = best
    h_best, g_best = _potentials(state, reg)
    shift = float(np.dot(w, g_best))
    return DualSolution(
        h=h_best + shift,
        g=g_best - shift,
        residual=residual,
        iterations=it,
        converged=residual <= tol,
    )
