"""Random-set estimators: excursion sets, coverage, the auxiliary variable, Vorob'ev quantiles.

The estimators never materialize the full (samples x nodes) field matrix:
streams of fields are folded into per-node exceedance counts plus a packed-bit
archive of the excursion indicators, from which the auxiliary variable and all
set-valued quantities follow.  Everything that feeds a threshold comparison is
kept as integer counts as long as possible, so quantile/region decisions are
free of float rounding surprises.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .fields import Field, Mesh, MeshMismatchError, NodeSet, TargetInterval
from .ioutil import write_csv
from .probinput import empirical_quantile

logger = logging.getLogger("exconf")

# bit patterns of every byte value, MSB first (np.packbits order)
_BYTE_BITS = np.unpackbits(np.arange(256, dtype=np.uint8)[:, None], axis=1).astype(bool)


# ---------------------------------------------------------------------------
# Elementary operations


def excursion_set(f: Field, target: TargetInterval) -> NodeSet:
    """Nodes where the field value falls inside the (closed) target interval."""
    return NodeSet(f.mesh, target.contains(f.values))


def chi_hat(exc: NodeSet, coverage: Field) -> float:
    """Minimum coverage probability over the excursion set; 1 on the empty set."""
    if not exc.mesh.same_as(coverage.mesh):
        raise MeshMismatchError("excursion set and coverage live on different meshes")
    if exc.is_empty:
        return 1.0
    return float(coverage.values[exc.mask].min())


def vorobev_quantile(coverage: Field, rho: float) -> NodeSet:
    """Nodes with coverage probability >= rho (ties included)."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must be in [0, 1]")
    return NodeSet(coverage.mesh, coverage.values >= rho)


def estimate_rho_star(chi_values, alpha: float) -> float:
    """Empirical (1 - alpha)-order-statistic of the auxiliary variable."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    return empirical_quantile(chi_values, 1.0 - alpha)


# ---------------------------------------------------------------------------
# Packed archives of many node sets


@dataclass(frozen=True)
class PackedSets:
    """Bit-packed archive of many node sets on a common mesh."""

    mesh: Mesh
    packed: np.ndarray  # (n_sets, ceil(n_x / 8)) uint8

    def __post_init__(self):
        packed = np.ascontiguousarray(np.asarray(self.packed, dtype=np.uint8))
        packed.setflags(write=False)
        object.__setattr__(self, "packed", packed)

    @property
    def n_sets(self) -> int:
        return self.packed.shape[0]

    @staticmethod
    def from_bool_matrix(mesh: Mesh, masks: np.ndarray) -> "PackedSets":
        masks = np.asarray(masks, dtype=bool)
        return PackedSets(mesh, np.packbits(masks, axis=1))

    @staticmethod
    def from_node_sets(sets) -> "PackedSets":
        sets = list(sets)
        if not sets:
            raise ValueError("need at least one node set")
        mesh = sets[0].mesh
        for s in sets[1:]:
            if not mesh.same_as(s.mesh):
                raise MeshMismatchError("node sets live on different meshes")
        return PackedSets.from_bool_matrix(mesh, np.stack([s.mask for s in sets]))

    def get(self, i: int) -> NodeSet:
        mask = np.unpackbits(self.packed[i], count=self.mesh.n_x).astype(bool)
        return NodeSet(self.mesh, mask)

    def contained_in(self, region: NodeSet) -> np.ndarray:
        """Per-set indicator of being a subset of ``region``."""
        if not self.mesh.same_as(region.mesh):
            raise MeshMismatchError("region lives on a different mesh")
        outside = np.packbits(~region.mask)
        return ~np.any(self.packed & outside, axis=1)

    def member_counts(self) -> np.ndarray:
        """Per-node membership counts across the archive."""
        counts = np.zeros(self.mesh.n_x, dtype=np.int64)
        chunk = 2048
        for i in range(0, self.n_sets, chunk):
            bools = np.unpackbits(self.packed[i:i + chunk], axis=1, count=self.mesh.n_x)
            counts += bools.sum(axis=0, dtype=np.int64)
        return counts


def chi_counts_from_packed(archive: PackedSets, counts: np.ndarray, n_samples: int) -> np.ndarray:
    """Auxiliary-variable numerators: min exceedance count over each stored set.

    Empty sets map to ``n_samples`` (the empty-set convention chi = 1).
    """
    n_x = archive.mesh.n_x
    counts32 = np.asarray(counts, dtype=np.int32)
    out = np.empty(archive.n_sets, dtype=np.int64)
    chunk = 1024
    for i in range(0, archive.n_sets, chunk):
        bools = np.unpackbits(archive.packed[i:i + chunk], axis=1, count=n_x).astype(bool)
        masked = np.where(bools, counts32[None, :], np.int32(n_samples))
        out[i:i + chunk] = masked.min(axis=1)
    return out


# ---------------------------------------------------------------------------
# Streaming estimation over field ensembles


def _iter_field_chunks(fields, mesh):
    """Normalize the accepted field inputs into (mesh, chunk iterator)."""
    if isinstance(fields, np.ndarray):
        if mesh is None:
            raise ValueError("mesh is required with raw arrays")
        mat = np.atleast_2d(fields)
        return mesh, (mat[i:i + 512] for i in range(0, mat.shape[0], 512))
    if hasattr(fields, "__next__"):
        if mesh is None:
            raise ValueError("mesh is required with chunk iterators")
        return mesh, fields
    fields = list(fields)
    if not fields:
        raise ValueError("need at least one field")
    f_mesh = fields[0].mesh
    for f in fields[1:]:
        if not f_mesh.same_as(f.mesh):
            raise MeshMismatchError("fields live on different meshes")
    if mesh is not None and not mesh.same_as(f_mesh):
        raise MeshMismatchError("fields do not live on the given mesh")
    mat = np.stack([f.values for f in fields])
    return f_mesh, (mat[i:i + 512] for i in range(0, mat.shape[0], 512))


def exceedance_scan(fields, target: TargetInterval, mesh: Mesh | None = None):
    """One pass over a field stream: per-node counts plus packed excursion bits.

    Returns ``(counts, archive, n_samples)``.
    """
    mesh, chunks = _iter_field_chunks(fields, mesh)
    counts = np.zeros(mesh.n_x, dtype=np.int64)
    packed_parts = []
    n = 0
    for chunk in chunks:
        chunk = np.atleast_2d(chunk)
        exc = target.contains(chunk)
        counts += np.count_nonzero(exc, axis=0)
        packed_parts.append(np.packbits(exc, axis=1))
        n += chunk.shape[0]
    if n == 0:
        raise ValueError("need at least one field")
    archive = PackedSets(mesh, np.concatenate(packed_parts, axis=0))
    return counts, archive, n


def coverage_probability(fields, target: TargetInterval, mesh: Mesh | None = None) -> Field:
    """Per-node fraction of fields whose value falls in the target interval."""
    counts, archive, n = exceedance_scan(fields, target, mesh)
    return Field(archive.mesh, counts / n)


@dataclass(frozen=True)
class ConfidenceEstimate:
    """Coverage field, auxiliary values, Vorob'ev threshold and region."""

    coverage: Field
    chi_values: np.ndarray
    rho_star: float
    region: NodeSet
    alpha: float
    n_samples: int

    def summary(self) -> dict:
        return {
            "alpha": self.alpha,
            "rho_star": self.rho_star,
            "region_volume": self.region.volume(),
            "region_nodes": self.region.count,
            "mesh_volume": self.region.mesh.total_volume,
            "n_samples": self.n_samples,
            "empty_region": self.region.is_empty,
        }

    def chi_to_csv(self, path) -> None:
        write_csv(path, ["sample", "chi"], ((i, c) for i, c in enumerate(self.chi_values)))


def estimate_from_counts(mesh: Mesh, counts: np.ndarray, chi_counts: np.ndarray,
                         n_samples: int, alpha: float) -> ConfidenceEstimate:
    """Assemble the confidence estimate from integer exceedance statistics."""
    coverage = Field(mesh, counts / n_samples)
    chi = np.asarray(chi_counts, dtype=np.int64) / n_samples
    rho = estimate_rho_star(chi, alpha)
    region = vorobev_quantile(coverage, rho)
    if region.is_empty:
        logger.warning(
            "confidence region is empty (rho_star=%.6g with no node reaching it); "
            "reporting the empty set", rho,
        )
    return ConfidenceEstimate(coverage, chi, float(rho), region, alpha, n_samples)


def confidence_region(fields, target: TargetInterval, alpha: float,
                      mesh: Mesh | None = None) -> ConfidenceEstimate:
    """Full estimation pipeline over an ensemble of fields.

    The stream is folded once into exceedance counts and packed excursion
    indicators; the auxiliary variable is then evaluated from the indicators,
    its (1 - alpha)-quantile gives the Vorob'ev threshold, and the region is
    the corresponding quantile set of the coverage field.
    """
    counts, archive, n = exceedance_scan(fields, target, mesh)
    chi_counts = chi_counts_from_packed(archive, counts, n)
    return estimate_from_counts(archive.mesh, counts, chi_counts, n, alpha)


# ---------------------------------------------------------------------------
# Fast path for latent-space ensembles (surrogate predictions and GP draws)


class LatentExcursionPipeline:
    """Exceedance statistics for fields given by latent coordinates.

    Reconstruction y = z V + mean is fused with the indicator test in
    node-pruned, cache-sized blocks.  Nodes whose value range over the whole
    latent batch can never (or must always) intersect the target are resolved
    by interval arithmetic up front and skipped in the hot loop; the result is
    identical to reconstructing every field in full.
    """

    def __init__(self, pca_model, target: TargetInterval, dtype=np.float64, chunk_rows=1024):
        self.pca = pca_model
        self.target = target
        self.dtype = np.dtype(dtype)
        self.chunk_rows = int(chunk_rows)
        self.mesh = pca_model.mesh
        self._prepared = False
        self._exc_buf = None

    def _node_value_bounds(self, Z: np.ndarray):
        """Rigorous per-node bounds on z . v(x) over the latent cloud.

        Combines an asymmetric per-dimension box bound with the bound from
        the smallest covariance-aligned ellipsoid enclosing the cloud; both
        hold for every point of the batch, so pruning on them is exact.
        """
        V = self.pca.basis  # (d_z, n_x)
        zmin, zmax = Z.min(axis=0), Z.max(axis=0)
        Vp, Vn = np.maximum(V, 0.0), np.minimum(V, 0.0)
        lo_box = zmin @ Vp + zmax @ Vn
        hi_box = zmax @ Vp + zmin @ Vn

        center = Z.mean(axis=0)
        dev = Z - center
        C = (dev.T @ dev) / max(Z.shape[0] - 1, 1)
        lam, Q = np.linalg.eigh(C)
        lam = np.maximum(lam, max(lam.max(), 0.0) * 1e-12 + 1e-300)
        white = (dev @ Q) / np.sqrt(lam)
        r = float(np.sqrt((white**2).sum(axis=1).max()))
        S = (np.sqrt(lam)[:, None] * (Q.T @ V))  # (d_z, n_x)
        sigma_dir = np.sqrt((S**2).sum(axis=0))
        shift = center @ V
        lo_ell = shift - r * sigma_dir
        hi_ell = shift + r * sigma_dir
        return np.maximum(lo_box, lo_ell), np.minimum(hi_box, hi_ell)

    def prepare(self, latent_batch: np.ndarray) -> None:
        """Classify nodes from the value bounds of the whole latent batch."""
        Z = np.asarray(latent_batch, dtype=float).reshape(-1, self.pca.d_z)
        mean = self.pca.mean_field
        dlo, dhi = self._node_value_bounds(Z)
        low, high = mean + dlo, mean + dhi
        scale = float(np.abs(high).max() + np.abs(low).max()) or 1.0
        margin = 0.0 if self.dtype == np.float64 else 1e-5 * scale

        lo, hi = self.target.low, self.target.high
        never = (high < lo - margin) | (low > hi + margin)
        always = (low >= lo + margin) & (high <= hi - margin)
        self.active = np.flatnonzero(~never & ~always)
        self.always = np.flatnonzero(always)
        self.never = np.flatnonzero(never)
        self._V_active = np.ascontiguousarray(self.pca.basis[:, self.active], dtype=self.dtype)
        # fold the mean field into per-node thresholds: indicator is
        # lo - mean <= z . v(x) <= hi - mean
        mean_act = mean[self.active]
        self._thr_lo = (lo - mean_act).astype(self.dtype) if np.isfinite(lo) else None
        self._thr_hi = (hi - mean_act).astype(self.dtype) if np.isfinite(hi) else None
        self._block = None
        self._prepared = True

    def counts_chi(self, latent: np.ndarray):
        """Counts per node and auxiliary-variable numerators for one field ensemble.

        ``latent`` is (n, d_z); returns ``(counts int64 (n_x,), chi_counts int64 (n,))``.
        """
        if not self._prepared:
            self.prepare(latent)
        Z = np.asarray(latent)
        n = Z.shape[0]
        Zt = Z.astype(self.dtype, copy=False)
        n_act = self.active.shape[0]
        counts = np.zeros(self.mesh.n_x, dtype=np.int64)
        counts[self.always] = n
        if n_act == 0:
            return counts, np.full(n, n, dtype=np.int64)

        n_bytes = (n_act + 7) // 8
        packed = np.empty((n, n_bytes), dtype=np.uint8)
        counts_act = np.zeros(n_act, dtype=np.int64)
        step = self.chunk_rows
        if self._block is None or self._block.shape != (min(step, n), n_act):
            self._block = np.empty((min(step, n), n_act), dtype=self.dtype)
        for i in range(0, n, step):
            m = min(step, n - i)
            block = np.matmul(Zt[i:i + m], self._V_active, out=self._block[:m])
            if self._thr_lo is not None and self._thr_hi is not None:
                e = (block >= self._thr_lo) & (block <= self._thr_hi)
            elif self._thr_lo is not None:
                e = block >= self._thr_lo
            else:
                e = block <= self._thr_hi
            counts_act += np.count_nonzero(e, axis=0)
            packed[i:i + m] = np.packbits(e, axis=1)
        counts[self.active] = counts_act

        # chi numerators: min active count over each row's set bits, resolved
        # through a per-(byte-position, byte-value) minimum table
        cdtype = np.int16 if n < 2**15 else np.int32
        sent = cdtype(n)
        cpad = np.full(n_bytes * 8, sent, dtype=cdtype)
        cpad[:n_act] = counts_act.astype(cdtype)
        table = np.where(_BYTE_BITS[None, :, :], cpad.reshape(n_bytes, 1, 8), sent).min(axis=2)
        chi_counts = np.empty(n, dtype=np.int64)
        cols = np.arange(n_bytes)
        for i in range(0, n, 4 * step):
            chi_counts[i:i + 4 * step] = table[cols[None, :], packed[i:i + 4 * step]].min(axis=1)
        return counts, chi_counts

    def estimate(self, latent: np.ndarray, alpha: float) -> ConfidenceEstimate:
        counts, chi_counts = self.counts_chi(latent)
        return estimate_from_counts(self.mesh, counts, chi_counts, latent.shape[0], alpha)
