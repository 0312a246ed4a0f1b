"""Linear dimensionality reduction of field snapshots with energy-based truncation.

The model is a centered SVD of the snapshot matrix.  The retained dimension is
the smallest one whose cumulative eigenvalue fraction (relative information
content) reaches the requested threshold.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fields import Field, Mesh, MeshMismatchError
from .ioutil import read_block_header, read_f64, write_block_header, write_csv, write_f64

_MAGIC = b"EXCPCA1\x00"


@dataclass(frozen=True)
class PcaModel:
    mesh: Mesh
    mean_field: np.ndarray    # (n_x,)
    basis: np.ndarray         # (d_z, n_x), rows orthonormal
    eigenvalues: np.ndarray   # all computed eigenvalues, nonincreasing
    d_z: int
    ric_threshold: float
    n_snapshots: int = 0
    degenerate: bool = False  # snapshots were all identical

    @property
    def n_x(self) -> int:
        return self.mean_field.shape[0]

    def ric(self, r: int) -> float:
        """Cumulative eigenvalue fraction of the leading ``r`` components."""
        denom = float(self._ric_mass())
        if denom <= 0.0:
            return 1.0
        return float(self.eigenvalues[:r].sum() / denom)

    def _ric_mass(self) -> float:
        # The centered snapshot matrix has rank <= n - 1, so the energy
        # denominator sums only the possibly-nonzero eigenvalues.
        k = max(min(len(self.eigenvalues), self.n_snapshots - 1), 1)
        return float(self.eigenvalues[:k].sum())

    def spectrum_to_csv(self, path) -> None:
        rows = ((j + 1, self.eigenvalues[j], self.ric(j + 1)) for j in range(len(self.eigenvalues)))
        write_csv(path, ["component", "eigenvalue", "ric"], rows)

    def to_binary(self, path) -> None:
        with Path(path).open("wb") as fh:
            _write_pca_block(fh, self)

    @staticmethod
    def from_binary(path, mesh: Mesh) -> "PcaModel":
        with Path(path).open("rb") as fh:
            return _read_pca_block(fh, mesh)


def _write_pca_block(fh, model: PcaModel) -> None:
    write_block_header(fh, _MAGIC, [model.n_x, model.d_z, len(model.eigenvalues), model.n_snapshots, int(model.degenerate)])
    write_f64(fh, [model.ric_threshold])
    write_f64(fh, model.mean_field)
    write_f64(fh, model.basis)
    write_f64(fh, model.eigenvalues)


def _read_pca_block(fh, mesh: Mesh) -> PcaModel:
    n_x, d_z, n_eig, n_snap, degen = read_block_header(fh, _MAGIC)
    if n_x != mesh.n_x:
        raise MeshMismatchError("serialized model was built on a different mesh")
    ric_threshold = read_f64(fh, 1)[0]
    mean = read_f64(fh, n_x)
    basis = read_f64(fh, d_z * n_x, (d_z, n_x))
    eig = read_f64(fh, n_eig)
    return PcaModel(mesh, mean, basis, eig, int(d_z), float(ric_threshold), int(n_snap), bool(degen))


def _snapshot_matrix(snapshots) -> tuple[Mesh, np.ndarray]:
    if isinstance(snapshots, np.ndarray):
        raise TypeError("pass a list of Field or use pca_fit_matrix")
    snapshots = list(snapshots)
    if len(snapshots) < 2:
        raise ValueError("need at least two snapshots")
    mesh = snapshots[0].mesh
    for f in snapshots[1:]:
        if not mesh.same_as(f.mesh):
            raise MeshMismatchError("snapshots live on different meshes")
    return mesh, np.stack([f.values for f in snapshots])


def pca_fit(snapshots, ric_threshold: float) -> PcaModel:
    """Fit the PCA model from a list of :class:`Field` snapshots."""
    mesh, Y = _snapshot_matrix(snapshots)
    return pca_fit_matrix(mesh, Y, ric_threshold)


def pca_fit_matrix(mesh: Mesh, Y: np.ndarray, ric_threshold: float) -> PcaModel:
    """Fit from an (n, n_x) snapshot matrix (rows are fields)."""
    if not 0.0 < ric_threshold <= 1.0:
        raise ValueError("ric_threshold must be in (0, 1]")
    Y = np.asarray(Y, dtype=float)
    n = Y.shape[0]
    if n < 2:
        raise ValueError("need at least two snapshots")
    mean = Y.mean(axis=0)
    Yc = Y - mean
    U, s, Vt = np.linalg.svd(Yc, full_matrices=False)
    eig = s**2 / (n - 1)

    scale = float(np.abs(Y).max()) or 1.0
    if s.size == 0 or s[0] <= 1e-12 * scale:
        warnings.warn("all snapshots identical: PCA is degenerate, keeping one zero-variance component")
        basis = Vt[:1].copy()
        _fix_signs(basis)
        return PcaModel(mesh, mean, basis, np.zeros_like(eig), 1, ric_threshold, n, degenerate=True)

    k_max = max(min(len(eig), n - 1), 1)
    mass = eig[:k_max].sum()
    ric = np.cumsum(eig[:k_max]) / mass
    d_z = int(np.searchsorted(ric, ric_threshold - 1e-12) + 1)
    d_z = min(d_z, k_max)
    basis = Vt[:d_z].copy()
    _fix_signs(basis)
    return PcaModel(mesh, mean, basis, eig, d_z, ric_threshold, n)


def _fix_signs(basis: np.ndarray) -> None:
    # Deterministic orientation: the largest-magnitude entry of each row is positive.
    for row in basis:
        k = int(np.argmax(np.abs(row)))
        if row[k] < 0:
            row *= -1.0


def pca_project(model: PcaModel, f: Field) -> np.ndarray:
    """Latent coordinates of a field: V (f - mean)."""
    if not model.mesh.same_as(f.mesh):
        raise MeshMismatchError("field lives on a different mesh")
    return model.basis @ (f.values - model.mean_field)


def pca_project_matrix(model: PcaModel, Y: np.ndarray) -> np.ndarray:
    """Latent coordinates of each row of an (n, n_x) matrix."""
    return (np.asarray(Y, dtype=float) - model.mean_field) @ model.basis.T


def pca_reconstruct(model: PcaModel, z) -> Field:
    """Field corresponding to latent coordinates: V^T z + mean."""
    z = np.asarray(z, dtype=float).ravel()
    if z.shape[0] != model.d_z:
        raise ValueError("latent dimension mismatch")
    return Field(model.mesh, model.basis.T @ z + model.mean_field)


def pca_reconstruct_matrix(model: PcaModel, Z: np.ndarray) -> np.ndarray:
    """Fields (rows) for a batch of latent vectors (n, d_z)."""
    Z = np.asarray(Z)
    if Z.shape[1] != model.d_z:
        raise ValueError("latent dimension mismatch")
    return Z @ model.basis + model.mean_field
