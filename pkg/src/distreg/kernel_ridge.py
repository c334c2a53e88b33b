"""Kernel ridge regression with the squared-exponential kernel on embeddings.

``K(u, v) = exp(-|u - v|^2 / l^2)`` where ``|.|`` is the weighted embedding
norm. The fitted regressor is ``f(x) = sum_i alpha_i K(x, x_i)`` with
``alpha = (G + n lambda I)^{-1} y``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.spatial.distance import cdist, pdist, squareform

from distreg._seeding import child_rng
from distreg.embeddings import EmbeddingVector, embedding_distance, stack
from distreg.exceptions import FactorizationError, FingerprintMismatchError

JITTERS = (0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


@dataclass(frozen=True)
class KernelConfig:
    length_scale: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.length_scale) and self.length_scale > 0):
            raise ValueError("length_scale must be finite and positive")


def kernel_value(cfg: KernelConfig, u: EmbeddingVector, v: EmbeddingVector) -> float:
    return float(np.exp(-embedding_distance(u, v) ** 2 / cfg.length_scale**2))


def squared_distances(A: np.ndarray, B: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return cdist(A, B, "sqeuclidean", w=weights)


def pairwise_squared_distances(A: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Exactly symmetric squared-distance matrix with zero diagonal."""
    if A.shape[0] == 1:
        return np.zeros((1, 1))
    return squareform(pdist(A, "sqeuclidean", w=weights))


def gram_matrix(cfg: KernelConfig, embeddings: Sequence[EmbeddingVector]) -> np.ndarray:
    coords, weights, _ = stack(embeddings)
    return np.exp(-pairwise_squared_distances(coords, weights) / cfg.length_scale**2)


def solve_ridge(G: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    """``(G + n lam I)^{-1} y`` by Cholesky, escalating diagonal jitter on failure."""
    n = G.shape[0]
    for jitter in JITTERS:
        A = G + (n * lam + jitter) * np.eye(n)
        try:
            factor = cho_factor(A, lower=True, check_finite=True)
        except LinAlgError:
            continue
        return cho_solve(factor, y)
    raise FactorizationError(
        f"Cholesky factorization failed for n={n}, lambda={lam} even with jitter {JITTERS[-1]}"
    )


@dataclass(frozen=True, eq=False)
class RidgeModel:
    train_coords: np.ndarray
    weights: np.ndarray
    fingerprint: str
    kernel: KernelConfig
    lam: float
    alpha: np.ndarray

    @property
    def n_train(self) -> int:
        return self.train_coords.shape[0]

    @property
    def train_embeddings(self) -> list[EmbeddingVector]:
        return [EmbeddingVector(c, self.weights, self.fingerprint) for c in self.train_coords]

    def rkhs_norm(self) -> float:
        K = np.exp(-squared_distances(self.train_coords, self.train_coords, self.weights) / self.kernel.length_scale**2)
        return float(np.sqrt(max(self.alpha @ K @ self.alpha, 0.0)))

    def to_dict(self) -> dict:
        return {
            "kernel": {"length_scale": self.kernel.length_scale},
            "lambda": self.lam,
            "fingerprint": self.fingerprint,
            "embeddings": self.train_coords.tolist(),
            "weights": self.weights.tolist(),
            "alpha": self.alpha.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RidgeModel":
        return cls(
            train_coords=np.array(data["embeddings"], dtype=np.float64),
            weights=np.array(data["weights"], dtype=np.float64),
            fingerprint=str(data["fingerprint"]),
            kernel=KernelConfig(float(data["kernel"]["length_scale"])),
            lam=float(data["lambda"]),
            alpha=np.array(data["alpha"], dtype=np.float64),
        )


def save_model(model: RidgeModel, path) -> None:
    # json writes floats with repr, which round-trips every double exactly
    Path(path).write_text(json.dumps(model.to_dict(), indent=1) + "\n")


def load_model(path) -> RidgeModel:
    return RidgeModel.from_dict(json.loads(Path(path).read_text()))


def fit(embeddings: Sequence[EmbeddingVector], labels, lam: float, kernel: KernelConfig | None = None) -> RidgeModel:
    kernel = kernel or KernelConfig()
    if len(embeddings) == 0:
        raise ValueError("cannot fit on an empty training set")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if y.shape[0] != len(embeddings):
        raise ValueError("one label per embedding is required")
    coords, weights, fp = stack(embeddings)
    G = np.exp(-pairwise_squared_distances(coords, weights) / kernel.length_scale**2)
    alpha = solve_ridge(G, y, lam)
    return RidgeModel(coords, weights, fp, kernel, float(lam), alpha)


def _check_query(model: RidgeModel, q: EmbeddingVector) -> None:
    if q.fingerprint != model.fingerprint:
        raise FingerprintMismatchError(
            f"query embedding {q.fingerprint} does not match model {model.fingerprint}"
        )
    if q.coords.shape[0] != model.train_coords.shape[1]:
        raise FingerprintMismatchError("query embedding length does not match the model")


def predict_many(model: RidgeModel, queries: Sequence[EmbeddingVector]) -> np.ndarray:
    if len(queries) == 0:
        return np.zeros(0)
    for q in queries:
        _check_query(model, q)
    Q = np.vstack([q.coords for q in queries])
    K = np.exp(-squared_distances(Q, model.train_coords, model.weights) / model.kernel.length_scale**2)
    return K @ model.alpha


def predict(model: RidgeModel, query: EmbeddingVector) -> float:
    return float(predict_many(model, [query])[0])


def rkhs_distance(model_a: RidgeModel, model_b: RidgeModel) -> float:
    """``|f_a - f_b|`` in the RKHS, expanded through the reproducing property."""
    if model_a.kernel != model_b.kernel:
        raise ValueError("models use different kernels")
    if model_a.fingerprint != model_b.fingerprint:
        raise FingerprintMismatchError("models were trained on different embedding configs")
    scale2 = model_a.kernel.length_scale**2
    w = model_a.weights

    def quad(A, a, B, b):
        return a @ np.exp(-squared_distances(A, B, w) / scale2) @ b

    Xa, Xb = model_a.train_coords, model_b.train_coords
    sq = (
        quad(Xa, model_a.alpha, Xa, model_a.alpha)
        - 2.0 * quad(Xa, model_a.alpha, Xb, model_b.alpha)
        + quad(Xb, model_b.alpha, Xb, model_b.alpha)
    )
    return float(np.sqrt(max(sq, 0.0)))


def regularized_risk(model: RidgeModel, embeddings: Sequence[EmbeddingVector], labels, alpha=None) -> float:
    """Empirical squared loss plus ``lambda |f|^2`` for coefficients ``alpha``."""
    alpha = model.alpha if alpha is None else np.asarray(alpha)
    coords, _, _ = stack(embeddings)
    G = np.exp(-squared_distances(coords, model.train_coords, model.weights) / model.kernel.length_scale**2)
    Gtt = np.exp(-squared_distances(model.train_coords, model.train_coords, model.weights) / model.kernel.length_scale**2)
    resid = np.asarray(labels) - G @ alpha
    return float(np.mean(resid**2) + model.lam * alpha @ Gtt @ alpha)


# ---------------------------------------------------------------------------
# Cross-validation


@dataclass(frozen=True, eq=False)
class CVResult:
    best_lambda: float
    best_scale: float
    lambda_grid: np.ndarray
    scale_grid: np.ndarray
    mse: np.ndarray  # shape (len(lambda_grid), len(scale_grid))

    def rows(self):
        for i, lam in enumerate(self.lambda_grid):
            for j, scale in enumerate(self.scale_grid):
                yield float(lam), float(scale), float(self.mse[i, j])


def cv_splits(n: int, seed: int, folds: int | None = None, n_splits: int = 10, holdout: float = 0.2):
    """Train/test index pairs: shuffled k-fold if ``folds`` is set, else random holdout splits."""
    rng = child_rng(seed, 0)
    if folds is not None:
        if folds < 2:
            raise ValueError("folds must be >= 2")
        if n < folds:
            raise ValueError(f"cannot make {folds} folds from {n} items")
        perm = rng.permutation(n)
        parts = np.array_split(perm, folds)
        return [(np.sort(np.concatenate(parts[:k] + parts[k + 1:])), np.sort(parts[k])) for k in range(folds)]
    if not 0.0 < holdout < 1.0:
        raise ValueError("holdout fraction must lie in (0, 1)")
    n_test = max(1, int(round(holdout * n)))
    if n_test >= n:
        raise ValueError(f"too few items ({n}) for a holdout fraction of {holdout}")
    out = []
    for _ in range(n_splits):
        perm = rng.permutation(n)
        out.append((np.sort(perm[n_test:]), np.sort(perm[:n_test])))
    return out


def cv_mse_table(D2: np.ndarray, y: np.ndarray, lambda_grid, scale_grid, splits) -> np.ndarray:
    """Mean test MSE over ``splits`` for every (lambda, scale) pair.

    ``D2`` is the full squared-distance matrix. One eigendecomposition per
    split and scale serves the whole lambda grid.
    """
    lambdas = np.asarray(lambda_grid, dtype=np.float64)
    table = np.zeros((lambdas.size, len(scale_grid)))
    for tr, te in splits:
        n_tr = tr.size
        D_tr, D_te = D2[np.ix_(tr, tr)], D2[np.ix_(te, tr)]
        for j, scale in enumerate(scale_grid):
            s, V = np.linalg.eigh(np.exp(-D_tr / scale**2))
            B = np.exp(-D_te / scale**2) @ V
            c = V.T @ y[tr]
            preds = B @ (c[:, None] / (s[:, None] + n_tr * lambdas[None, :]))
            table[:, j] += np.mean((preds - y[te][:, None]) ** 2, axis=0)
    return table / len(splits)


def select_best(table: np.ndarray, lambda_grid, scale_grid, rtol: float = 1e-10) -> tuple[float, float]:
    """Argmin of the table; ties go to the larger lambda, then the larger scale."""
    lambdas = np.asarray(lambda_grid, dtype=np.float64)
    scales = np.asarray(scale_grid, dtype=np.float64)
    finite = np.where(np.isfinite(table), table, np.inf)
    best = finite.min()
    if not np.isfinite(best):
        raise FactorizationError("cross-validation produced no finite error")
    tied = finite <= best + rtol * abs(best)
    candidates = [(lambdas[i], scales[j]) for i, j in zip(*np.nonzero(tied))]
    lam, scale = max(candidates)
    return float(lam), float(scale)


def cross_validate(
    embeddings: Sequence[EmbeddingVector],
    labels,
    lambda_grid,
    scale_grid=(1.0,),
    folds: int | None = None,
    seed: int = 0,
    n_splits: int = 10,
    holdout: float = 0.2,
) -> CVResult:
    """Grid search over (lambda, length scale) by held-out mean squared error.

    With ``folds`` set, shuffled k-fold CV is used; otherwise ``n_splits``
    random splits holding out a ``holdout`` fraction (10 splits of 80/20 by
    default). The split RNG depends only on ``seed``.
    """
    lambda_grid = np.asarray(lambda_grid, dtype=np.float64).reshape(-1)
    scale_grid = np.asarray(scale_grid, dtype=np.float64).reshape(-1)
    if lambda_grid.size == 0 or scale_grid.size == 0:
        raise ValueError("grids must be non-empty")
    if np.any(lambda_grid <= 0) or np.any(scale_grid <= 0):
        raise ValueError("grid values must be positive")
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    coords, weights, _ = stack(embeddings)
    if y.size != coords.shape[0]:
        raise ValueError("one label per embedding is required")
    splits = cv_splits(y.size, seed, folds=folds, n_splits=n_splits, holdout=holdout)
    D2 = pairwise_squared_distances(coords, weights)
    table = cv_mse_table(D2, y, lambda_grid, scale_grid, splits)
    lam, scale = select_best(table, lambda_grid, scale_grid)
    return CVResult(lam, scale, lambda_grid, scale_grid, table)

