"""Input random-vector model: independent marginals, sampling, quantiles.

Marginals are limited to normal, truncated-normal and uniform laws, which is
all the experiments require.  The joint density is the product of the
marginal densities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .ioutil import write_csv, read_csv_matrix


@dataclass(frozen=True)
class Normal:
    mean: float
    std: float

    def __post_init__(self):
        if self.std <= 0:
            raise ValueError("std must be positive")

    def pdf(self, x):
        return stats.norm.pdf(x, loc=self.mean, scale=self.std)

    def sample(self, rng, n):
        return rng.normal(self.mean, self.std, size=n)


@dataclass(frozen=True)
class TruncatedNormal:
    mean: float
    std: float
    low: float = -np.inf
    high: float = np.inf

    def __post_init__(self):
        if self.std <= 0:
            raise ValueError("std must be positive")
        if not self.low < self.high:
            raise ValueError("invalid truncation bounds")

    def _ab(self):
        return (self.low - self.mean) / self.std, (self.high - self.mean) / self.std

    def pdf(self, x):
        a, b = self._ab()
        return stats.truncnorm.pdf(x, a, b, loc=self.mean, scale=self.std)

    def sample(self, rng, n):
        a, b = self._ab()
        return stats.truncnorm.rvs(a, b, loc=self.mean, scale=self.std, size=n, random_state=rng)


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError("invalid uniform bounds")

    def pdf(self, x):
        return stats.uniform.pdf(x, loc=self.low, scale=self.high - self.low)

    def sample(self, rng, n):
        return rng.uniform(self.low, self.high, size=n)


Marginal = Normal | TruncatedNormal | Uniform


@dataclass(frozen=True)
class InputDistribution:
    """Independent product of scalar marginals."""

    marginals: tuple

    def __post_init__(self):
        object.__setattr__(self, "marginals", tuple(self.marginals))
        if len(self.marginals) == 0:
            raise ValueError("need at least one marginal")

    @property
    def dim(self) -> int:
        return len(self.marginals)

    def pdf(self, points) -> np.ndarray:
        """Joint density at each row of ``points`` (n, d)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.ones(pts.shape[0])
        for j, m in enumerate(self.marginals):
            out *= m.pdf(pts[:, j])
        return out

    def sample(self, rng, n) -> np.ndarray:
        cols = [m.sample(rng, n) for m in self.marginals]
        return np.stack(cols, axis=1)


@dataclass(frozen=True)
class SampleSet:
    """Matrix of input samples with a provenance tag."""

    points: np.ndarray  # (n, d)
    provenance: str = "monte-carlo"

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        pts = np.ascontiguousarray(pts)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def to_csv(self, path) -> None:
        header = [f"u{i}" for i in range(self.dim)]
        write_csv(path, header, (tuple(row) for row in self.points))

    @staticmethod
    def from_csv(path, provenance="monte-carlo") -> "SampleSet":
        return SampleSet(read_csv_matrix(path), provenance=provenance)


def mc_sample(dist: InputDistribution, n: int, seed) -> SampleSet:
    """``n`` i.i.d. draws from the input distribution, reproducible per seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    return SampleSet(dist.sample(rng, n), provenance="monte-carlo")


def lhs_sample(bounds, n: int, seed) -> SampleSet:
    """Latin hypercube sample over an axis-aligned box.

    Random-permutation LHS with uniform jitter inside each stratum: every 1-D
    projection places exactly one point in each of the ``n`` equal-width
    strata of its axis.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    if bounds.shape[1] != 2 or np.any(bounds[:, 1] <= bounds[:, 0]):
        raise ValueError("degenerate sampling box")
    rng = np.random.default_rng(seed)
    d = bounds.shape[0]
    pts = np.empty((n, d))
    for j in range(d):
        lo, hi = bounds[j]
        strata = rng.permutation(n)
        jitter = rng.random(n)
        pts[:, j] = lo + (strata + jitter) * (hi - lo) / n
    return SampleSet(pts, provenance="lhs")


def empirical_quantile(values, level: float) -> float:
    """Order-statistic quantile: the element of rank ceil(level * n).

    The rank is clamped to [1, n] so the operation is total for every level
    in [0, 1]; level 1 returns the maximum and level -> 0+ the minimum.
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("empty sample")
    if not 0.0 <= level <= 1.0:
        raise ValueError("level must be in [0, 1]")
    rank = math.ceil(level * v.size)
    rank = min(max(rank, 1), v.size)
    return float(np.partition(v, rank - 1)[rank - 1])
