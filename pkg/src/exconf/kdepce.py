"""KDE exceedance model and sparse polynomial-chaos regression for the literature baseline.

The baseline approximates the coverage probability with a per-node Gaussian
kernel density estimate (Silverman bandwidth) built once from the initial
samples, and regresses the auxiliary variable on the inputs with a
total-degree orthonormal polynomial basis whose coefficients are selected by
least-angle regression with corrected leave-one-out error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr
from sklearn.linear_model import lars_path

from .fields import Field, Mesh, TargetInterval
from .probinput import InputDistribution, Normal, TruncatedNormal, Uniform


def silverman_bandwidth(samples) -> float:
    """Silverman's rule-of-thumb bandwidth: 0.9 min(std, IQR/1.34) n^(-1/5)."""
    y = np.asarray(samples, dtype=float).ravel()
    n = y.size
    if n < 2:
        return 0.0
    std = float(y.std(ddof=1))
    q75, q25 = np.percentile(y, [75.0, 25.0])
    iqr = float(q75 - q25)
    spread = min(std, iqr / 1.34) if iqr > 0 else std
    return 0.9 * spread * n ** (-0.2)


class KdeExceedance:
    """Frozen per-node KDE of the output distribution with interval exceedance.

    Nodes with zero sample spread fall back to the hard indicator.
    """

    def __init__(self, mesh: Mesh, outputs: np.ndarray):
        self.mesh = mesh
        Y = np.atleast_2d(np.asarray(outputs, dtype=float))
        if Y.shape[1] != mesh.n_x:
            raise ValueError("output width must equal node count")
        self.samples = Y
        self.bandwidths = np.array([silverman_bandwidth(Y[:, k]) for k in range(mesh.n_x)])

    def coverage(self, target: TargetInterval) -> Field:
        """Smoothed probability that the output lies in the target interval, per node."""
        Y, h = self.samples, self.bandwidths
        pos = h > 0
        probs = np.empty(self.mesh.n_x)

        def upper_cdf(bound):  # Pr[Y <= bound] under the kernel mixture
            out = np.empty(self.mesh.n_x)
            if np.isfinite(bound):
                out[pos] = ndtr((bound - Y[:, pos]) / h[pos]).mean(axis=0)
                out[~pos] = (Y[:, ~pos] <= bound).mean(axis=0)
            else:
                out[:] = 1.0 if bound > 0 else 0.0
            return out

        hi = upper_cdf(target.high)
        if np.isfinite(target.low):
            if np.any(pos):
                lo = np.zeros(self.mesh.n_x)
                lo[pos] = ndtr((target.low - Y[:, pos]) / h[pos]).mean(axis=0)
                lo[~pos] = (Y[:, ~pos] < target.low).mean(axis=0)
            else:
                lo = (Y < target.low).mean(axis=0)
        else:
            lo = np.zeros(self.mesh.n_x)
        probs = hi - lo
        return Field(self.mesh, np.clip(probs, 0.0, 1.0))


# ---------------------------------------------------------------------------
# Polynomial chaos with LARS-selected sparse coefficients


def total_degree_indices(dim: int, degree: int) -> np.ndarray:
    """All multi-indices of total degree <= degree, in graded lexicographic order."""
    idx = [np.zeros(dim, dtype=int)]
    for total in range(1, degree + 1):
        idx.extend(_compositions(total, dim))
    return np.array(idx, dtype=int)


def _compositions(total, dim):
    if dim == 1:
        yield np.array([total], dtype=int)
        return
    for head in range(total, -1, -1):
        for rest in _compositions(total - head, dim - 1):
            yield np.concatenate([[head], rest])


def _standardize(points, marginals) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.empty_like(pts)
    for j, m in enumerate(marginals):
        if isinstance(m, (Normal, TruncatedNormal)):
            out[:, j] = (pts[:, j] - m.mean) / m.std
        elif isinstance(m, Uniform):
            out[:, j] = 2.0 * (pts[:, j] - m.low) / (m.high - m.low) - 1.0
        else:  # pragma: no cover
            raise TypeError(f"unsupported marginal {type(m).__name__}")
    return out


def _poly_1d(marginal, xi, degree) -> np.ndarray:
    """Orthonormal 1-D basis values (n, degree + 1) for one marginal."""
    n = xi.shape[0]
    out = np.empty((n, degree + 1))
    out[:, 0] = 1.0
    if degree == 0:
        return out
    if isinstance(marginal, (Normal, TruncatedNormal)):
        # Probabilists' Hermite, He_{k+1} = xi He_k - k He_{k-1}; norm sqrt(k!)
        out[:, 1] = xi
        for k in range(1, degree):
            out[:, k + 1] = xi * out[:, k] - k * out[:, k - 1]
        fact = 1.0
        for k in range(1, degree + 1):
            fact *= k
            out[:, k] /= np.sqrt(fact)
        return out
    # Legendre on [-1, 1], orthonormal w.r.t. the uniform density.
    out[:, 1] = xi
    for k in range(1, degree):
        out[:, k + 1] = ((2 * k + 1) * xi * out[:, k] - k * out[:, k - 1]) / (k + 1)
    for k in range(1, degree + 1):
        out[:, k] *= np.sqrt(2 * k + 1)
    return out


def basis_matrix(points, marginals, indices) -> np.ndarray:
    """Design matrix of the tensorized orthonormal basis at ``points``."""
    xi = _standardize(points, marginals)
    degree = int(indices.max()) if indices.size else 0
    per_dim = [_poly_1d(m, xi[:, j], degree) for j, m in enumerate(marginals)]
    n, P = xi.shape[0], indices.shape[0]
    out = np.ones((n, P))
    for j in range(xi.shape[1]):
        out *= per_dim[j][:, indices[:, j]]
    return out


def _corrected_loo(A, y, coef) -> float:
    """Corrected leave-one-out error of an OLS fit, relative to the sample variance."""
    n, P = A.shape
    if n <= P:
        return np.inf
    G = A.T @ A
    try:
        Ginv = np.linalg.inv(G)
    except np.linalg.LinAlgError:
        return np.inf
    H = np.einsum("ij,jk,ik->i", A, Ginv, A)
    resid = y - A @ coef
    denom = 1.0 - H
    if np.any(denom <= 1e-12):
        return np.inf
    err = float(np.mean((resid / denom) ** 2))
    var = float(y.var())
    if var <= 0:
        return 0.0 if err < 1e-28 else np.inf
    correction = (n / (n - P)) * (1.0 + np.trace(Ginv))
    return err / var * correction


@dataclass
class PceModel:
    """Sparse polynomial-chaos regressor u -> scalar."""

    dist: InputDistribution
    indices: np.ndarray   # (P_active, d)
    coeffs: np.ndarray    # (P_active,)
    degree: int
    loo_error: float

    def predict(self, points) -> np.ndarray:
        A = basis_matrix(points, self.dist.marginals, self.indices)
        return A @ self.coeffs


def fit_pce(points, values, dist: InputDistribution, max_degree=5, max_terms=60) -> PceModel:
    """Degree-adaptive sparse PCE via LARS with corrected leave-one-out selection.

    For each candidate total degree the LARS path orders the non-constant
    basis terms; every prefix of the path is refit by ordinary least squares
    and scored by corrected leave-one-out error; the best (degree, prefix)
    combination wins.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    y = np.asarray(values, dtype=float).ravel()
    n = y.shape[0]
    if n != pts.shape[0]:
        raise ValueError("points/values length mismatch")

    const_idx = np.zeros((1, dist.dim), dtype=int)
    if float(y.var()) == 0.0 or n < 3:
        return PceModel(dist, const_idx, np.array([y.mean()]), 0, 0.0)

    best = None
    for degree in range(1, max_degree + 1):
        indices = total_degree_indices(dist.dim, degree)
        A_full = basis_matrix(pts, dist.marginals, indices)
        X = A_full[:, 1:]
        Xc = X - X.mean(axis=0)
        yc = y - y.mean()
        norms = np.linalg.norm(Xc, axis=0)
        usable = norms > 1e-12
        if not np.any(usable):
            continue
        cols = np.flatnonzero(usable)
        try:
            _, active_order, _ = lars_path(Xc[:, cols], yc, method="lar",
                                           max_iter=min(n - 2, cols.size, max_terms))
        except Exception:
            continue
        active_order = [cols[a] + 1 for a in active_order]  # back to full-basis indexing

        for k in range(len(active_order) + 1):
            sel = np.concatenate([[0], active_order[:k]]).astype(int)
            A = A_full[:, sel]
            if A.shape[1] >= n:
                break
            coef, *_ = np.linalg.lstsq(A, y, rcond=None)
            loo = _corrected_loo(A, y, coef)
            if best is None or loo < best[0]:
                best = (loo, degree, indices[sel], coef)
    if best is None:
        return PceModel(dist, const_idx, np.array([y.mean()]), 0, np.inf)
    loo, degree, idx, coef = best
    return PceModel(dist, idx, coef, degree, float(loo))
