"""Performance metrics: containment probability, symmetric-difference volume, membership maps."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .excursion import LatentExcursionPipeline, PackedSets, estimate_rho_star
from .fields import Field, Mesh, NodeSet, TargetInterval, set_volume, symmetric_difference
from .probinput import empirical_quantile


def effective_containment(reference_excursions, region: NodeSet) -> float:
    """Fraction of reference excursion sets that are subsets of ``region``.

    Accepts a :class:`PackedSets` archive or any iterable of :class:`NodeSet`.
    """
    if isinstance(reference_excursions, PackedSets):
        return float(reference_excursions.contained_in(region).mean())
    flags = [exc.is_subset(region) for exc in reference_excursions]
    if not flags:
        raise ValueError("need at least one excursion set")
    return float(np.mean(flags))


def symdiff_volume(ref: NodeSet, est: NodeSet, mesh: Mesh | None = None) -> float:
    """Volume of the symmetric difference between two regions."""
    return set_volume(symmetric_difference(ref, est), mesh)


def gp_membership_probability(bundle, target: TargetInterval, alpha: float) -> Field:
    """Per-node probability of lying in the confidence region across GP realizations.

    Each realization of the bundle induces its own coverage field, threshold
    and region; the returned field is the per-node fraction of realizations
    whose region contains the node.
    """
    pipe = LatentExcursionPipeline(bundle.pca, target, dtype=np.float32)
    pipe.prepare(bundle.latent)
    mesh = bundle.pca.mesh
    member_counts = np.zeros(mesh.n_x, dtype=np.int64)
    n = bundle.n_points
    for j in range(bundle.n_rea):
        counts, chi_counts = pipe.counts_chi(bundle.latent[j])
        rho = estimate_rho_star(chi_counts / n, alpha)
        member_counts += counts / n >= rho
    return Field(mesh, member_counts / bundle.n_rea)


def doe_membership_probability(regions) -> Field:
    """Per-node fraction of runs whose final region contains the node."""
    regions = list(regions)
    if not regions:
        raise ValueError("need at least one region")
    mesh = regions[0].mesh
    acc = np.zeros(mesh.n_x, dtype=np.int64)
    for r in regions:
        if not mesh.same_as(r.mesh):
            raise ValueError("regions live on different meshes")
        acc += r.mask
    return Field(mesh, acc / len(regions))


def select_median_doe(alpha_hats) -> int:
    """Index of the run achieving the median containment (lower median when even)."""
    vals = np.asarray(list(alpha_hats), dtype=float)
    if vals.size == 0:
        raise ValueError("need at least one run")
    order = np.argsort(vals, kind="stable")
    return int(order[int(np.ceil(vals.size / 2.0)) - 1])


@dataclass
class MetricsReport:
    alpha: float
    alpha_mcs: float
    per_run_alpha_hat: list
    per_run_rel_error: list
    per_run_symdiff: list
    median_run: int
    median_alpha_hat: float
    median_rel_error: float
    median_symdiff: float
    mesh_volume: float
    extras: dict = field(default_factory=dict)

    def to_json(self, path) -> None:
        payload = {
            "alpha": self.alpha,
            "alpha_mcs": self.alpha_mcs,
            "per_run_alpha_hat": [float(v) for v in self.per_run_alpha_hat],
            "per_run_rel_error": [float(v) for v in self.per_run_rel_error],
            "per_run_symdiff_volume": [float(v) for v in self.per_run_symdiff],
            "median_run": self.median_run,
            "median_alpha_hat": self.median_alpha_hat,
            "median_rel_error": self.median_rel_error,
            "median_symdiff_volume": self.median_symdiff,
            "mesh_volume": self.mesh_volume,
            **self.extras,
        }
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def build_report(alpha, alpha_mcs, alpha_hats, symdiffs, mesh_volume, extras=None) -> MetricsReport:
    alpha_hats = [float(v) for v in alpha_hats]
    rel = [abs(v - alpha_mcs) / alpha_mcs for v in alpha_hats]
    symdiffs = [float(v) for v in symdiffs]
    median_run = select_median_doe(alpha_hats)
    return MetricsReport(
        alpha=alpha,
        alpha_mcs=alpha_mcs,
        per_run_alpha_hat=alpha_hats,
        per_run_rel_error=rel,
        per_run_symdiff=symdiffs,
        median_run=median_run,
        median_alpha_hat=alpha_hats[median_run],
        median_rel_error=empirical_quantile(rel, 0.5),
        median_symdiff=empirical_quantile(symdiffs, 0.5),
        mesh_volume=mesh_volume,
        extras=extras or {},
    )
