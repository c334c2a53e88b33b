"""Grouped samples, CSV ingestion and the synthetic task generators."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from distreg._seeding import child_rng
from distreg.exceptions import DataFormatError, DimensionMismatchError

CHOLESKY_JITTER = 1e-10


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    """Uniform empirical measure on the rows of ``points`` (shape ``N x d``)."""

    points: np.ndarray
    group_id: str = ""

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ValueError(f"points must be a non-empty N x d matrix, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError(f"group {self.group_id!r} has non-finite sample values")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n_samples(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True, eq=False)
class RegressionDataset:
    distributions: tuple[EmpiricalDistribution, ...]
    labels: np.ndarray
    dim: int | None = None

    def __post_init__(self):
        dists = tuple(self.distributions)
        labels = np.asarray(self.labels, dtype=np.float64).reshape(-1)
        if len(dists) != labels.shape[0]:
            raise ValueError("one label per distribution is required")
        if not np.all(np.isfinite(labels)):
            raise ValueError("labels must be finite")
        dims = {d.dim for d in dists}
        if len(dims) > 1:
            raise DimensionMismatchError(f"distributions have differing dimensions {sorted(dims)}")
        dim = dims.pop() if dims else self.dim
        if self.dim is not None and dim != self.dim:
            raise DimensionMismatchError(f"declared dimension {self.dim} but samples have {dim}")
        labels.setflags(write=False)
        object.__setattr__(self, "distributions", dists)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "dim", dim)

    def __len__(self) -> int:
        return len(self.distributions)

    def __iter__(self) -> Iterator[tuple[EmpiricalDistribution, float]]:
        return iter(zip(self.distributions, self.labels.tolist()))

    @property
    def group_ids(self) -> list[str]:
        return [d.group_id for d in self.distributions]

    def subset(self, indices: Sequence[int]) -> "RegressionDataset":
        idx = [int(i) for i in indices]
        return RegressionDataset(
            tuple(self.distributions[i] for i in idx), self.labels[idx], dim=self.dim
        )


# ---------------------------------------------------------------------------
# CSV ingestion


def _parse_float(cell: str, path: Path, line: int, col: int) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise DataFormatError(
            f"{path}:{line}: column {col}: non-numeric value {cell!r}"
        ) from None
    if not math.isfinite(value):
        raise DataFormatError(f"{path}:{line}: column {col}: non-finite value {cell!r}")
    return value


def _read_samples(path: Path) -> tuple[dict[str, list[list[float]]], int]:
    groups: dict[str, list[list[float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file, expected header group_id,x_1,...") from None
        if len(header) < 2 or header[0].strip() != "group_id":
            raise DataFormatError(f"{path}:1: header must be group_id,x_1,...,x_d")
        width = len(header)
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != width:
                raise DataFormatError(
                    f"{path}:{line}: expected {width} fields, found {len(row)}"
                )
            values = [_parse_float(c, path, line, j + 2) for j, c in enumerate(row[1:])]
            groups.setdefault(row[0], []).append(values)
    return groups, width - 1


def load_dataset(samples_path: str | Path, labels_path: str | Path) -> RegressionDataset:
    """Read a samples CSV and a labels CSV into a dataset.

    Items follow the order in which groups first appear in the labels file;
    sample rows keep their file order.
    """
    samples_path, labels_path = Path(samples_path), Path(labels_path)
    groups, dim = _read_samples(samples_path)

    dists: list[EmpiricalDistribution] = []
    labels: list[float] = []
    seen: set[str] = set()
    with open(labels_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{labels_path}: empty file, expected header group_id,y") from None
        if [h.strip() for h in header] != ["group_id", "y"]:
            raise DataFormatError(f"{labels_path}:1: header must be group_id,y")
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != 2:
                raise DataFormatError(f"{labels_path}:{line}: expected 2 fields, found {len(row)}")
            gid = row[0]
            if gid in seen:
                continue
            if gid not in groups:
                raise DataFormatError(f"unknown group {gid}")
            seen.add(gid)
            labels.append(_parse_float(row[1], labels_path, line, 2))
            dists.append(EmpiricalDistribution(np.array(groups[gid]), group_id=gid))
    return RegressionDataset(tuple(dists), np.array(labels, dtype=np.float64), dim=dim)


def load_samples(samples_path: str | Path) -> list[EmpiricalDistribution]:
    """Read a samples CSV alone; groups follow their order of first appearance."""
    samples_path = Path(samples_path)
    groups, _ = _read_samples(samples_path)
    return [EmpiricalDistribution(np.array(rows), group_id=gid) for gid, rows in groups.items()]


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def write_dataset(dataset: RegressionDataset, samples_path: str | Path, labels_path: str | Path) -> None:
    """Inverse of :func:`load_dataset`; group ids default to the item index."""
    ids = [d.group_id or str(i) for i, d in enumerate(dataset.distributions)]
    with open(samples_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group_id"] + [f"x_{k + 1}" for k in range(dataset.dim or 0)])
        for gid, dist in zip(ids, dataset.distributions):
            for row in dist.points:
                w.writerow([gid] + [format_float(v) for v in row])
    with open(labels_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group_id", "y"])
        for gid, y in zip(ids, dataset.labels):
            w.writerow([gid, format_float(y)])


# ---------------------------------------------------------------------------
# Synthetic tasks


@dataclass(frozen=True)
class GmmTaskConfig:
    d: int
    C: int
    n: int
    N: int
    seed: int = 0

    def __post_init__(self):
        for name in ("d", "C", "n", "N"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"GmmTaskConfig.{name} must be >= 1")


@dataclass(frozen=True)
class EcologicalTaskConfig:
    d: int
    n: int
    N: int
    seed: int = 0

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("EcologicalTaskConfig.d must be >= 2")
        if self.n < 1 or self.N < 1:
            raise ValueError("EcologicalTaskConfig.n and N must be >= 1")


def gmm_component(rng: np.random.Generator, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw one mixture component ``(mean, covariance)``."""
    mean = rng.uniform(-5.0, 5.0, size=d)
    a = rng.uniform(1.0, 4.0)
    A = rng.uniform(-1.0, 1.0, size=(d, d))
    B = np.diag(rng.uniform(0.0, 1.0, size=d))
    cov = a * A @ A.T + B
    return mean, 0.5 * (cov + cov.T)


def _cholesky(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return np.linalg.cholesky(cov + CHOLESKY_JITTER * np.eye(cov.shape[0]))


@dataclass(frozen=True)
class GmmLaw:
    """Equal-weight Gaussian mixture; the ground truth behind one GMM item."""

    means: np.ndarray
    covariances: np.ndarray

    @property
    def n_modes(self) -> int:
        return self.means.shape[0]

    def sample(self, rng: np.random.Generator, N: int) -> np.ndarray:
        p, d = self.means.shape
        comp = rng.integers(0, p, size=N)
        z = rng.standard_normal((N, d))
        out = np.empty((N, d))
        for b in range(p):
            mask = comp == b
            out[mask] = self.means[b] + z[mask] @ _cholesky(self.covariances[b]).T
        return out


def draw_gmm_law(rng: np.random.Generator, d: int, C: int) -> GmmLaw:
    p = int(rng.integers(1, C + 1))
    comps = [gmm_component(rng, d) for _ in range(p)]
    return GmmLaw(np.array([m for m, _ in comps]), np.array([c for _, c in comps]))


def sample_gmm_task(cfg: GmmTaskConfig) -> RegressionDataset:
    """Mode-count regression: each item is a random mixture, its label the mode count."""
    dists, labels = [], []
    for i in range(cfg.n):
        rng = child_rng(cfg.seed, i)
        law = draw_gmm_law(rng, cfg.d, cfg.C)
        dists.append(EmpiricalDistribution(law.sample(rng, cfg.N), group_id=str(i)))
        labels.append(float(law.n_modes))
    return RegressionDataset(tuple(dists), np.array(labels), dim=cfg.d)


@dataclass(frozen=True)
class EcologicalLaw:
    alpha: float
    beta: tuple[float, float]
    d: int

    def sample(self, rng: np.random.Generator, N: int) -> np.ndarray:
        A = rng.uniform(-self.alpha, self.alpha, size=N)
        loc = np.zeros(self.d)
        loc[:2] = self.beta
        B = loc + 0.5 * rng.standard_normal((N, self.d))
        return A[:, None] + B


def vote_probability(X: np.ndarray) -> np.ndarray:
    """Individual probability of voting 1: logistic in ``10 (x_1 - x_2)``."""
    z = 10.0 * (X[:, 0] - X[:, 1])
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def sample_ecological_group(rng: np.random.Generator, d: int, N: int) -> tuple[np.ndarray, float]:
    law = EcologicalLaw(
        alpha=float(rng.uniform(0.05, 0.1)),
        beta=(float(rng.uniform(-0.7, 0.7)), float(rng.uniform(-0.7, 0.7))),
        d=d,
    )
    X = law.sample(rng, N)
    votes = rng.random(N) < vote_probability(X)
    return X, float(votes.mean())


def sample_ecological_task(cfg: EcologicalTaskConfig) -> RegressionDataset:
    """Synthetic ecological-inference task: labels are per-group vote shares."""
    dists, labels = [], []
    for i in range(cfg.n):
        X, y = sample_ecological_group(child_rng(cfg.seed, i), cfg.d, cfg.N)
        dists.append(EmpiricalDistribution(X, group_id=str(i)))
        labels.append(y)
    return RegressionDataset(tuple(dists), np.array(labels), dim=cfg.d)
