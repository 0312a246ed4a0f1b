"""Analytic simulators with known ground truth, and the cached reference solution.

Two testbeds are registered: ``sand-piles`` (sum of four Gaussian bumps on an
80x80 grid, bivariate normal input) and ``smoke-1d`` (a one-dimensional case
whose coverage probability has a closed form).
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .excursion import ConfidenceEstimate, PackedSets, chi_counts_from_packed, estimate_from_counts, exceedance_scan
from .fields import Field, Mesh, TargetInterval
from .probinput import InputDistribution, Normal, mc_sample

CACHE_ENV_VAR = "EXCONF_CACHE_DIR"


def default_cache_dir() -> Path:
    env = os.environ.get(CACHE_ENV_VAR)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "exconf"


def sand_pile(x, mu, var) -> np.ndarray:
    """Bivariate Gaussian density with diagonal covariance diag(var), centered at mu."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    mu = np.asarray(mu, dtype=float)
    var = np.asarray(var, dtype=float)
    if np.any(var <= 0):
        raise ValueError("variances must be positive")
    norm = 1.0 / (2.0 * np.pi * np.sqrt(var.prod()))
    q = ((x - mu) ** 2 / var).sum(axis=1)
    return norm * np.exp(-0.5 * q)


class SandPiles:
    """Sum of four Gaussian piles with input-dependent amplitudes.

    The output is y(u, x) = 1 + c1(u) P1(x) + ... + c4(u) P4(x) on an 80x80
    grid of cell centers over [-2, 2]^2; the input is bivariate normal with
    standard deviation 0.5 per coordinate.
    """

    name = "sand-piles"
    centers = np.array([[-3.0, 3.0], [3.0, 3.0], [3.0, -3.0], [-3.0, -3.0]])
    variances = np.array([[4.0, 9.0], [9.0, 4.0], [4.0, 4.0], [4.0, 4.0]])
    default_target = TargetInterval(1.03, np.inf)
    default_alpha = 0.9

    def __init__(self, grid_cells=80):
        self.mesh = Mesh.regular_grid([[-2.0, 2.0], [-2.0, 2.0]], (grid_cells, grid_cells), name=self.name)
        self.input_dist = InputDistribution((Normal(0.0, 0.5), Normal(0.0, 0.5)))
        self.lhs_box = np.array([[-2.0, 2.0], [-2.0, 2.0]])
        self._piles = np.stack([
            sand_pile(self.mesh.nodes, mu, var) for mu, var in zip(self.centers, self.variances)
        ])  # (4, n_x)

    @staticmethod
    def amplitudes(points) -> np.ndarray:
        u = np.atleast_2d(np.asarray(points, dtype=float))
        u1, u2 = u[:, 0], u[:, 1]
        return np.stack([
            2.0 * np.sin(3.0 * u1 * u2),
            2.0 * u1**2 * np.exp(-0.5 * u2**2),
            np.cos((u1 + u2) / np.pi),
            np.sin(u1 - u2 + np.pi / 3.0),
        ], axis=1)

    def fields(self, points) -> np.ndarray:
        """Simulator outputs (n, n_x) for a batch of inputs."""
        return 1.0 + self.amplitudes(points) @ self._piles

    def field(self, u) -> Field:
        return Field(self.mesh, self.fields(np.atleast_2d(u))[0])


class Smoke1D:
    """1-D analytic case: y(u, x) = 1 + u exp(-x^2) with u ~ N(0, 1).

    The coverage probability is available in closed form, which gives an
    exact oracle for the Monte Carlo coverage estimator.
    """

    name = "smoke-1d"
    default_target = TargetInterval(1.2, np.inf)
    default_alpha = 0.9

    def __init__(self, n_nodes=101):
        self.mesh = Mesh.line(-1.0, 1.0, n_nodes, name=self.name)
        self.input_dist = InputDistribution((Normal(0.0, 1.0),))
        self.lhs_box = np.array([[-3.0, 3.0]])
        self._g = np.exp(-self.mesh.nodes[:, 0] ** 2)  # > 0 everywhere

    def fields(self, points) -> np.ndarray:
        u = np.atleast_2d(np.asarray(points, dtype=float))[:, 0]
        return 1.0 + u[:, None] * self._g[None, :]

    def field(self, u) -> Field:
        return Field(self.mesh, self.fields(np.atleast_2d(u))[0])

    def coverage_exact(self, target: TargetInterval) -> Field:
        """Closed-form coverage: Pr[low <= 1 + U g(x) <= high]."""
        hi = ndtr((target.high - 1.0) / self._g) if np.isfinite(target.high) else 1.0
        lo = ndtr((target.low - 1.0) / self._g) if np.isfinite(target.low) else 0.0
        return Field(self.mesh, hi - lo)


_REGISTRY = {"sand-piles": SandPiles, "smoke-1d": Smoke1D}


def get_testbed(name: str):
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise KeyError(f"unknown testbed {name!r}; available: {sorted(_REGISTRY)}") from None


@dataclass(frozen=True)
class ReferenceSolution:
    """True-simulator Monte Carlo reference: estimate, excursion archive, own containment."""

    estimate: ConfidenceEstimate
    excursions: PackedSets
    alpha_mcs: float
    cache_path: Path


def _cache_key(testbed_name, target: TargetInterval, n_mcs: int, seed: int) -> str:
    payload = json.dumps(
        {"testbed": testbed_name, "low": repr(target.low), "high": repr(target.high),
         "n_mcs": int(n_mcs), "seed": int(seed)},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:24]


def reference_cache_path(testbed, target: TargetInterval, n_mcs: int, seed: int,
                         cache_dir=None) -> Path:
    """Cache file a reference solution with this key would live in."""
    cache_dir = Path(cache_dir) if cache_dir is not None else default_cache_dir()
    return cache_dir / f"reference_{_cache_key(testbed.name, target, n_mcs, seed)}.npz"


def reference_solution(testbed, alpha: float, target: TargetInterval, n_mcs: int,
                       seed: int, cache_dir=None) -> ReferenceSolution:
    """Confidence-region estimate from the true simulator, cached on disk.

    The cache stores the alpha-independent statistics (exceedance counts,
    packed excursion indicators, auxiliary numerators); the threshold and the
    region are reassembled for the requested alpha.  A second call with the
    same key leaves the cached file untouched.
    """
    path = reference_cache_path(testbed, target, n_mcs, seed, cache_dir)
    path.parent.mkdir(parents=True, exist_ok=True)

    if path.exists():
        data = np.load(path)
        counts = data["counts"]
        packed = data["packed"]
        chi_counts = data["chi_counts"]
    else:
        samples = mc_sample(testbed.input_dist, n_mcs, seed)
        counts, archive, _ = exceedance_scan(
            _field_chunks(testbed, samples.points), target, testbed.mesh)
        packed = archive.packed
        chi_counts = chi_counts_from_packed(archive, counts, n_mcs)
        tmp = path.with_suffix(".tmp.npz")
        np.savez_compressed(tmp, counts=counts, packed=packed, chi_counts=chi_counts)
        os.replace(tmp, path)

    archive = PackedSets(testbed.mesh, packed)
    estimate = estimate_from_counts(testbed.mesh, counts, chi_counts, n_mcs, alpha)
    alpha_mcs = float(archive.contained_in(estimate.region).mean())
    return ReferenceSolution(estimate, archive, alpha_mcs, path)


def _field_chunks(testbed, points, chunk=512):
    for i in range(0, points.shape[0], chunk):
        yield testbed.fields(points[i:i + chunk])
