"""Meshes, scalar fields on meshes, and node subsets with set algebra.

A mesh is a fixed, ordered collection of node locations with a quadrature
weight (volume) per node.  Fields and node sets always refer to the mesh they
were built on; mixing objects from different meshes raises
:class:`MeshMismatchError`.  All containers are immutable after construction,
so they can be shared freely between workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ioutil import write_csv


class MeshMismatchError(ValueError):
    """Operands live on different meshes."""


def _frozen(arr, dtype=float) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Mesh:
    """Node locations in R^d with one nonnegative volume per node."""

    nodes: np.ndarray         # (n_x, d_x)
    node_volumes: np.ndarray  # (n_x,)
    name: str = ""

    def __post_init__(self):
        nodes = np.atleast_2d(np.asarray(self.nodes, dtype=float))
        vols = np.asarray(self.node_volumes, dtype=float).ravel()
        if nodes.shape[0] < 1:
            raise ValueError("mesh needs at least one node")
        if vols.shape[0] != nodes.shape[0]:
            raise ValueError("node_volumes length must match node count")
        if np.any(vols < 0) or not np.all(np.isfinite(vols)):
            raise ValueError("node volumes must be finite and nonnegative")
        object.__setattr__(self, "nodes", _frozen(nodes))
        object.__setattr__(self, "node_volumes", _frozen(vols))

    @property
    def n_x(self) -> int:
        return self.nodes.shape[0]

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def total_volume(self) -> float:
        return float(self.node_volumes.sum())

    @staticmethod
    def regular_grid(bounds, shape, name="") -> "Mesh":
        """Regular grid of cell centers over an axis-aligned box.

        ``bounds`` is (d, 2) and ``shape`` the number of cells per axis.  Every
        node carries the cell volume, so the mesh volume equals the box volume.
        """
        bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
        shape = tuple(int(s) for s in np.atleast_1d(shape))
        if len(shape) != bounds.shape[0]:
            raise ValueError("bounds/shape dimension mismatch")
        axes = []
        cell = 1.0
        for (lo, hi), n in zip(bounds, shape):
            if not (hi > lo) or n < 1:
                raise ValueError("degenerate grid axis")
            w = (hi - lo) / n
            axes.append(lo + (np.arange(n) + 0.5) * w)
            cell *= w
        grids = np.meshgrid(*axes, indexing="ij")
        nodes = np.stack([g.ravel() for g in grids], axis=1)
        return Mesh(nodes, np.full(nodes.shape[0], cell), name=name)

    @staticmethod
    def line(low, high, n_nodes, name="") -> "Mesh":
        """1-D mesh of ``n_nodes`` equally spaced nodes including endpoints."""
        if n_nodes < 1 or not (high > low):
            raise ValueError("degenerate line mesh")
        xs = np.linspace(low, high, n_nodes)
        vol = (high - low) / n_nodes
        return Mesh(xs[:, None], np.full(n_nodes, vol), name=name)

    def same_as(self, other: "Mesh") -> bool:
        return self is other or (
            self.nodes.shape == other.nodes.shape
            and np.array_equal(self.nodes, other.nodes)
            and np.array_equal(self.node_volumes, other.node_volumes)
        )


def _check_mesh(a: Mesh, b: Mesh) -> None:
    if not a.same_as(b):
        raise MeshMismatchError("operands are defined on different meshes")


@dataclass(frozen=True)
class Field:
    """One real value per mesh node (a single functional output)."""

    mesh: Mesh
    values: np.ndarray  # (n_x,)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).ravel()
        if vals.shape[0] != self.mesh.n_x:
            raise ValueError("field length must equal node count")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", _frozen(vals))

    def to_csv(self, path) -> None:
        d = self.mesh.dim
        header = [f"x{i}" for i in range(d)] + ["value"]
        rows = (tuple(self.mesh.nodes[i]) + (self.values[i],) for i in range(self.mesh.n_x))
        write_csv(path, header, rows)


@dataclass(frozen=True)
class NodeSet:
    """Subset of mesh nodes (boolean membership per node)."""

    mesh: Mesh
    mask: np.ndarray  # (n_x,) bool

    def __post_init__(self):
        mask = np.asarray(self.mask)
        if mask.dtype != np.bool_:
            mask = mask.astype(bool)
        mask = mask.ravel()
        if mask.shape[0] != self.mesh.n_x:
            raise ValueError("mask length must equal node count")
        object.__setattr__(self, "mask", _frozen(mask, dtype=bool))

    @staticmethod
    def empty(mesh: Mesh) -> "NodeSet":
        return NodeSet(mesh, np.zeros(mesh.n_x, dtype=bool))

    @staticmethod
    def full(mesh: Mesh) -> "NodeSet":
        return NodeSet(mesh, np.ones(mesh.n_x, dtype=bool))

    @staticmethod
    def from_indices(mesh: Mesh, indices) -> "NodeSet":
        mask = np.zeros(mesh.n_x, dtype=bool)
        mask[np.asarray(indices, dtype=int)] = True
        return NodeSet(mesh, mask)

    def __and__(self, other: "NodeSet") -> "NodeSet":
        _check_mesh(self.mesh, other.mesh)
        return NodeSet(self.mesh, self.mask & other.mask)

    def __or__(self, other: "NodeSet") -> "NodeSet":
        _check_mesh(self.mesh, other.mesh)
        return NodeSet(self.mesh, self.mask | other.mask)

    def __xor__(self, other: "NodeSet") -> "NodeSet":
        _check_mesh(self.mesh, other.mesh)
        return NodeSet(self.mesh, self.mask ^ other.mask)

    def __sub__(self, other: "NodeSet") -> "NodeSet":
        _check_mesh(self.mesh, other.mesh)
        return NodeSet(self.mesh, self.mask & ~other.mask)

    def __invert__(self) -> "NodeSet":
        return NodeSet(self.mesh, ~self.mask)

    def __eq__(self, other) -> bool:
        return isinstance(other, NodeSet) and self.mesh.same_as(other.mesh) and np.array_equal(self.mask, other.mask)

    def is_subset(self, other: "NodeSet") -> bool:
        _check_mesh(self.mesh, other.mesh)
        return not np.any(self.mask & ~other.mask)

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.mask))

    @property
    def is_empty(self) -> bool:
        return not self.mask.any()

    def volume(self) -> float:
        return set_volume(self, self.mesh)

    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    def to_csv(self, path) -> None:
        d = self.mesh.dim
        header = [f"x{i}" for i in range(d)] + ["member"]
        rows = (tuple(self.mesh.nodes[i]) + (int(self.mask[i]),) for i in range(self.mesh.n_x))
        write_csv(path, header, rows)


@dataclass(frozen=True)
class TargetInterval:
    """Closed target range of output values; either bound may be infinite."""

    low: float = -np.inf
    high: float = np.inf

    def __post_init__(self):
        low, high = float(self.low), float(self.high)
        if np.isnan(low) or np.isnan(high) or low > high:
            raise ValueError("require low <= high")
        if not (np.isfinite(low) or np.isfinite(high)):
            raise ValueError("at least one bound must be finite")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    def contains(self, values) -> np.ndarray:
        """Elementwise membership indicator (closed interval)."""
        v = np.asarray(values)
        if np.isfinite(self.low) and np.isfinite(self.high):
            return (v >= self.low) & (v <= self.high)
        if np.isfinite(self.low):
            return v >= self.low
        return v <= self.high

    def __str__(self):
        return f"[{self.low}, {self.high}]"


def set_volume(s: NodeSet, mesh: Mesh | None = None) -> float:
    """Total volume of a node set (sum of member node volumes; 0 if empty)."""
    if mesh is not None:
        _check_mesh(s.mesh, mesh)
    return float(s.mesh.node_volumes @ s.mask)


def symmetric_difference(a: NodeSet, b: NodeSet) -> NodeSet:
    """Nodes in exactly one of the two sets."""
    return a ^ b
