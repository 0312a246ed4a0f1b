"""Ordinary Kriging with constant (estimated) mean, plus fast conditioned path sampling.

Hyperparameters are fitted by maximizing the profiled marginal likelihood:
for every trial set of lengthscales the constant mean and process variance
have closed-form optima, so the derivative-free search only walks the
log-lengthscale box.  Joint path draws at many points use a truncated
spectral (Karhunen-Loeve) expansion of the prior, evaluated with the Nystrom
extension on a random anchor subset, followed by the classical Kriging
residual correction to condition on the training data.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from .probinput import SampleSet, lhs_sample

SQRT5 = np.sqrt(5.0)
KERNEL_KINDS = ("squared-exponential", "matern-5/2")

# Lengthscale search box relative to the per-dimension data range.
LENGTHSCALE_REL_BOUNDS = (1e-2, 1e2)
NUGGET_ESCALATION_MAX = 1e-4


class GpFitError(RuntimeError):
    """Raised when the Gram matrix stays non-factorizable after nugget escalation."""


@dataclass(frozen=True)
class Kernel:
    """Stationary anisotropic covariance with unit-distance parametrization."""

    kind: str
    lengthscales: np.ndarray  # (d,)
    variance: float = 1.0

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if np.any(ls <= 0) or self.variance <= 0:
            raise ValueError("lengthscales and variance must be positive")
        ls = np.ascontiguousarray(ls)
        ls.setflags(write=False)
        object.__setattr__(self, "lengthscales", ls)

    def __call__(self, A, B) -> np.ndarray:
        """Cross-covariance matrix between rows of A and rows of B."""
        A = np.atleast_2d(np.asarray(A, dtype=float)) / self.lengthscales
        B = np.atleast_2d(np.asarray(B, dtype=float)) / self.lengthscales
        sq = cdist(A, B, "sqeuclidean")
        return self.variance * _corr_from_sqdist(sq, self.kind)


def _corr_from_sqdist(sq: np.ndarray, kind: str) -> np.ndarray:
    if kind == "squared-exponential":
        return np.exp(-0.5 * sq)
    r = np.sqrt(np.maximum(sq, 0.0))
    return (1.0 + SQRT5 * r + (5.0 / 3.0) * sq) * np.exp(-SQRT5 * r)


@dataclass(frozen=True)
class GpModel:
    """Fitted ordinary-Kriging model (immutable)."""

    train_inputs: np.ndarray   # (n, d)
    train_outputs: np.ndarray  # (n,)
    kernel: Kernel
    nugget: float              # relative jitter tau; noise variance is variance * tau
    mean_const: float
    chol_factor: np.ndarray    # lower Cholesky factor of K + variance*tau*I
    alpha_vector: np.ndarray   # (K + noise I)^-1 (z - mean)
    ones_solve: np.ndarray     # (K + noise I)^-1 1
    log_marginal_likelihood: float
    fit_info: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.train_inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.train_inputs.shape[1]


def _profiled_nll(sq_dists, z, kind, tau):
    """Negative profiled log-likelihood as a function of lengthscales.

    ``sq_dists`` holds per-dimension squared differences (n, n, d); the Gram
    matrix for lengthscales theta is built with one tensor contraction.
    Returns +inf for non-factorizable trial matrices.
    """
    n = z.shape[0]
    ones = np.ones(n)

    def nll(log_theta):
        theta = np.exp(log_theta)
        sq = sq_dists @ (1.0 / theta**2)
        R = _corr_from_sqdist(sq, kind)
        R[np.diag_indices_from(R)] += tau
        try:
            L = cholesky(R, lower=True)
        except np.linalg.LinAlgError:
            return np.inf
        u1 = solve_triangular(L, ones, lower=True)
        uz = solve_triangular(L, z, lower=True)
        mu = float(u1 @ uz) / float(u1 @ u1)
        ur = uz - mu * u1
        sigma2 = float(ur @ ur) / n
        sigma2 = max(sigma2, 1e-30)
        logdet = 2.0 * np.log(np.diag(L)).sum()
        return 0.5 * (n * np.log(sigma2) + logdet + n * (1.0 + np.log(2.0 * np.pi)))

    return nll


def _build_model(X, z, kind, theta, tau) -> GpModel:
    n = X.shape[0]
    unit = Kernel(kind, theta, 1.0)
    R = unit(X, X)
    R[np.diag_indices_from(R)] += tau
    L_R = cholesky(R, lower=True)
    ones = np.ones(n)
    u1 = solve_triangular(L_R, ones, lower=True)
    uz = solve_triangular(L_R, z, lower=True)
    mu = float(u1 @ uz) / float(u1 @ u1)
    ur = uz - mu * u1
    sigma2 = max(float(ur @ ur) / n, 1e-30)
    logdet_R = 2.0 * np.log(np.diag(L_R)).sum()
    lml = -0.5 * (n * np.log(sigma2) + logdet_R + n * (1.0 + np.log(2.0 * np.pi)))

    kernel = Kernel(kind, theta, sigma2)
    L = np.sqrt(sigma2) * L_R  # Cholesky factor of sigma2 * (R + tau I)
    resid = z - mu
    alpha = cho_solve((L, True), resid)
    ones_solve = cho_solve((L, True), ones)
    return GpModel(
        train_inputs=X,
        train_outputs=z,
        kernel=kernel,
        nugget=tau,
        mean_const=mu,
        chol_factor=L,
        alpha_vector=alpha,
        ones_solve=ones_solve,
        log_marginal_likelihood=float(lml),
    )


def gp_fit(X, z, kernel_kind="squared-exponential", nugget=1e-8, restarts=20, seed=0) -> GpModel:
    """Fit lengthscales (and profiled mean/variance) by multistart COBYLA.

    ``X`` may be a :class:`SampleSet` or an (n, d) array.  On Cholesky failure
    the relative nugget is escalated tenfold up to 1e-4 before giving up.
    """
    if isinstance(X, SampleSet):
        X = X.points
    X = np.atleast_2d(np.asarray(X, dtype=float))
    z = np.asarray(z, dtype=float).ravel()
    n, d = X.shape
    if n < 2:
        raise ValueError("need at least two training points")
    if z.shape[0] != n:
        raise ValueError("inputs/outputs length mismatch")
    if nugget < 0:
        raise ValueError("nugget must be nonnegative")
    if kernel_kind not in KERNEL_KINDS:
        raise ValueError(f"unknown kernel kind {kernel_kind!r}")

    ranges = X.max(axis=0) - X.min(axis=0)
    ranges[ranges <= 0] = 1.0
    lo = np.log(LENGTHSCALE_REL_BOUNDS[0] * ranges)
    hi = np.log(LENGTHSCALE_REL_BOUNDS[1] * ranges)
    bounds = list(zip(lo, hi))
    starts = lhs_sample(np.stack([lo, hi], axis=1), max(restarts, 1), seed).points

    diffs = X[:, None, :] - X[None, :, :]
    sq_dists = diffs**2

    tau = max(nugget, 0.0)
    last_error = None
    while True:
        nll = _profiled_nll(sq_dists, z, kernel_kind, tau)
        best_x, best_val, initial_vals = None, np.inf, []
        for x0 in starts:
            v0 = nll(x0)
            initial_vals.append(-v0 if np.isfinite(v0) else -np.inf)
            res = minimize(nll, x0, method="COBYLA", bounds=bounds,
                           options={"rhobeg": 0.5, "maxiter": 250, "tol": 1e-3})
            xc = np.clip(res.x, lo, hi)
            val = nll(xc)
            if np.isfinite(val) and val < best_val:
                best_val, best_x = val, xc
        if best_x is not None:
            try:
                model = _build_model(X, z, kernel_kind, np.exp(best_x), tau)
                model.fit_info.update(
                    initial_lml=initial_vals, restarts=len(starts), escalated_nugget=tau,
                )
                return model
            except np.linalg.LinAlgError as exc:  # pragma: no cover - needs near-singular final R
                last_error = exc
        if tau >= NUGGET_ESCALATION_MAX:
            raise GpFitError(
                f"Gram matrix not positive definite up to nugget {tau:g}; "
                f"training inputs are too ill-conditioned ({last_error or 'no feasible lengthscales'})"
            )
        tau = max(tau * 10.0, 1e-12)


def gp_predict(model: GpModel, points):
    """Posterior mean and variance at one point or at rows of a matrix.

    The variance is clamped at zero.  Passing a 1-D point returns scalars.
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    K_star = model.kernel(pts, model.train_inputs)  # (m, n)
    mean = model.mean_const + K_star @ model.alpha_vector
    v = solve_triangular(model.chol_factor, K_star.T, lower=True)
    var = model.kernel.variance - np.einsum("ij,ij->j", v, v)
    var = np.maximum(var, 0.0)
    if single:
        return float(mean[0]), float(var[0])
    return mean, var


@dataclass(frozen=True)
class PathSampler:
    """Truncated spectral expansion of the prior for joint path draws."""

    model: GpModel
    anchor_points: np.ndarray   # (m, d)
    kl_eigvals: np.ndarray      # (n_kl,), positive, nonincreasing
    kl_coeff: np.ndarray        # (m, n_kl), eigvecs * eigvals^-1/2
    retained_energy: float

    @property
    def n_kl(self) -> int:
        return self.kl_eigvals.shape[0]


def build_path_sampler(model: GpModel, candidate_points, n_kl=None, energy=0.99,
                       seed=0, max_anchors=512) -> PathSampler:
    """Spectral sampler anchored on a random subsample of the candidate points.

    Either request a fixed number of terms ``n_kl`` or keep the smallest count
    whose eigenvalue mass reaches ``energy``.  Rank-deficient spectra reduce
    the retained count with a warning.
    """
    if isinstance(candidate_points, SampleSet):
        candidate_points = candidate_points.points
    cand = np.atleast_2d(np.asarray(candidate_points, dtype=float))
    m = min(max_anchors, cand.shape[0])
    rng = np.random.default_rng(seed)
    idx = rng.choice(cand.shape[0], size=m, replace=False)
    anchors = cand[np.sort(idx)]

    G = model.kernel(anchors, anchors)
    w, V = np.linalg.eigh(G)
    w, V = w[::-1], V[:, ::-1]
    total = float(np.maximum(w, 0.0).sum())
    positive = w > max(w[0], 0.0) * 1e-12
    rank = int(np.count_nonzero(positive))

    if n_kl is not None:
        if n_kl > m:
            raise ValueError("n_kl cannot exceed the anchor count")
        r = int(n_kl)
        if r > rank:
            warnings.warn(f"anchor Gram rank {rank} < requested n_kl {n_kl}; truncating")
            r = rank
    else:
        frac = np.cumsum(w[:rank]) / total
        r = int(np.searchsorted(frac, energy - 1e-12) + 1)
        r = min(r, rank)

    eig = w[:r]
    coeff = V[:, :r] / np.sqrt(eig)
    retained = float(eig.sum() / total)
    return PathSampler(model, anchors, eig, coeff, retained)


def sample_conditioned_paths(sampler: PathSampler, eval_points, n_rea: int, seed=0) -> np.ndarray:
    """Joint conditioned GP draws at ``eval_points``; returns (n_rea, n_eval).

    Each draw is an unconditioned spectral path corrected by the Kriging
    residual: Z(u) + m(u) - m_Z(u), where m_Z is the Kriging predictor (same
    Gram factor and plug-in constant mean as the model) fitted to the path's
    own values at the training inputs.  With the plug-in mean the conditioned
    moments agree with :func:`gp_predict` up to spectral truncation error.
    """
    if isinstance(eval_points, SampleSet):
        eval_points = eval_points.points
    P = np.atleast_2d(np.asarray(eval_points, dtype=float))
    model = sampler.model
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((sampler.n_kl, n_rea))

    C = sampler.kl_coeff @ xi                                   # (m, n_rea)
    K_pa = model.kernel(P, sampler.anchor_points)
    K_ta = model.kernel(model.train_inputs, sampler.anchor_points)
    Z_eval = K_pa @ C                                           # zero-mean at eval points
    Z_train = K_ta @ C                                          # zero-mean at training inputs

    A = cho_solve((model.chol_factor, True), Z_train)           # (n, n_rea)

    K_pt = model.kernel(P, model.train_inputs)                  # (n_eval, n)
    post_mean = model.mean_const + K_pt @ model.alpha_vector
    path_mean = K_pt @ A
    out = Z_eval + post_mean[:, None] - path_mean
    return np.ascontiguousarray(out.T)
