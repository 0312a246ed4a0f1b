"""Max-min active learning of excursion-set confidence regions, plus the two baselines.

The learning loop alternates simulator calls, surrogate retraining and
re-estimation of the confidence region.  New points are picked among the
Monte Carlo population: feasible candidates are those whose estimated
auxiliary value lies inside the realization-quantile band of the Vorob'ev
threshold, and among them the density-weighted distance to the current design
is maximized.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.distance import cdist

from .excursion import ConfidenceEstimate, LatentExcursionPipeline, estimate_from_counts
from .fields import TargetInterval, set_volume, symmetric_difference
from .ioutil import write_csv
from .kdepce import KdeExceedance, fit_pce
from .metrics import effective_containment
from .probinput import InputDistribution, SampleSet, empirical_quantile, lhs_sample, mc_sample
from .surrogate import FunctionalSurrogate, RealizationBundle, SurrogateConfig, predict_latent, realize_fields, surrogate_train

logger = logging.getLogger("exconf")


class SimulatorError(RuntimeError):
    """Simulator failure during learning; carries the partial history."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class LearningConfig:
    alpha: float = 0.9
    target: TargetInterval = TargetInterval(1.03, np.inf)
    n_init: int = 20
    budget: int = 60
    n_mcs: int = 10_000
    n_rea: int = 100
    beta_lo: float = 0.1
    beta_hi: float = 0.9
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)
    seed: int = 0
    mcs_seed: int = 1000

    def __post_init__(self):
        if not 0.0 < self.beta_lo < self.beta_hi < 1.0:
            raise ValueError("require 0 < beta_lo < beta_hi < 1")
        if self.budget < 0:
            raise ValueError("budget must be nonnegative")


@dataclass
class IterationRecord:
    budget: int
    n_train: int
    d_z: int
    chosen: np.ndarray | None
    rho_star: float
    q_lo: float
    q_hi: float
    region_volume: float
    alpha_hat: float = np.nan
    alpha_rel_err: float = np.nan
    symdiff_volume: float = np.nan
    seconds: float = 0.0


@dataclass
class LearningHistory:
    method: str
    records: list
    final_estimate: ConfidenceEstimate
    doe: SampleSet
    final_surrogate: FunctionalSurrogate | None
    n_sim_calls: int

    def to_csv(self, path) -> None:
        d = self.doe.dim
        header = (["budget", "n_train", "d_z", "rho_star", "q_lo", "q_hi", "region_volume",
                   "alpha_hat", "alpha_rel_err", "symdiff_volume"]
                  + [f"u{i}" for i in range(d)])
        rows = []
        for r in self.records:
            u = tuple(r.chosen) if r.chosen is not None else (np.nan,) * d
            rows.append((r.budget, r.n_train, r.d_z, r.rho_star, r.q_lo, r.q_hi,
                         r.region_volume, r.alpha_hat, r.alpha_rel_err, r.symdiff_volume) + u)
        write_csv(path, header, rows)

    def timings_to_csv(self, path) -> None:
        write_csv(path, ["budget", "seconds"], ((r.budget, r.seconds) for r in self.records))


def rho_star_band(bundle: RealizationBundle, target: TargetInterval, alpha: float,
                  beta_lo=0.1, beta_hi=0.9):
    """Realization quantile band of the Vorob'ev threshold.

    Every GP realization induces its own coverage field, auxiliary values and
    threshold; the band is the pair of order-statistic quantiles of those
    thresholds.  Returns ``(q_lo, q_hi, per-realization thresholds)``.
    """
    pipe = LatentExcursionPipeline(bundle.pca, target, dtype=np.float32)
    pipe.prepare(bundle.latent)
    n = bundle.n_points
    rho = np.empty(bundle.n_rea)
    for j in range(bundle.n_rea):
        _, chi_counts = pipe.counts_chi(bundle.latent[j])
        rho[j] = empirical_quantile(chi_counts / n, 1.0 - alpha)
    return empirical_quantile(rho, beta_lo), empirical_quantile(rho, beta_hi), rho


def maxmin_acquire(candidates: SampleSet, doe_points, chi_values, band,
                   dist: InputDistribution, rho_star_draws=None):
    """Pick the next sample among the candidates.

    Feasible candidates have their auxiliary value inside ``band``; the score
    is the d-th root of the input density times the Euclidean distance to the
    nearest design point.  A feasible set that is empty, or that consists
    only of points already in the design (every score zero), first widens the
    band to the (0.01, 0.99) realization quantiles and then drops the
    constraint entirely.  Ties resolve to the lowest candidate index.
    Returns ``(index, point)``.
    """
    pts = candidates.points
    if pts.shape[0] == 0:
        raise ValueError("empty candidate set")
    chi = np.asarray(chi_values, dtype=float).ravel()
    doe = np.atleast_2d(np.asarray(doe_points, dtype=float))

    stages = [(band, "requested band")]
    if rho_star_draws is not None:
        widened = (empirical_quantile(rho_star_draws, 0.01), empirical_quantile(rho_star_draws, 0.99))
        stages.append((widened, "widened band"))
    stages.append((None, "unconstrained"))

    for i, (stage_band, label) in enumerate(stages):
        if stage_band is None:
            feasible = np.ones(pts.shape[0], dtype=bool)
        else:
            feasible = (chi >= stage_band[0]) & (chi <= stage_band[1])
        if not feasible.any():
            continue
        idx = np.flatnonzero(feasible)
        min_dist = cdist(pts[idx], doe).min(axis=1)
        density = dist.pdf(pts[idx])
        score = density ** (1.0 / dist.dim) * min_dist
        k = int(np.argmax(score))
        if score[k] > 0.0 or stage_band is None:
            if i > 0:
                logger.warning("max-min fallback to %s (band (%.4g, %.4g) had no usable candidate)",
                               label, band[0], band[1])
            best = int(idx[k])
            return best, pts[best]
    raise AssertionError("unreachable: the unconstrained stage always returns")


def _oracle_metrics(record: IterationRecord, estimate: ConfidenceEstimate, oracle) -> None:
    if oracle is None:
        return
    a_hat = effective_containment(oracle.excursions, estimate.region)
    record.alpha_hat = a_hat
    record.alpha_rel_err = abs(a_hat - oracle.alpha_mcs) / oracle.alpha_mcs
    record.symdiff_volume = set_volume(symmetric_difference(oracle.estimate.region, estimate.region))


def run_active_learning(testbed, config: LearningConfig, oracle=None) -> LearningHistory:
    """Budgeted max-min learning loop; returns the per-iteration history.

    ``oracle`` is an optional :class:`~exconf.testbeds.ReferenceSolution`
    used to fill the containment / symmetric-difference columns.
    """
    ss = np.random.SeedSequence(config.seed)
    lhs_seed, *iter_seeds = ss.spawn(2 * (config.budget + 1) + 1)
    mcs = mc_sample(testbed.input_dist, config.n_mcs, config.mcs_seed)

    doe = lhs_sample(testbed.lhs_box, config.n_init, lhs_seed).points
    outputs = _run_simulator(testbed, doe, history=None)
    n_calls = doe.shape[0]

    records = []
    history = LearningHistory("maxmin", records, None, SampleSet(doe, "lhs"), None, n_calls)
    for k in range(config.budget + 1):
        t0 = time.perf_counter()
        surrogate = surrogate_train(SampleSet(doe, "active"), outputs, config.surrogate,
                                    seed=iter_seeds[2 * k], mesh=testbed.mesh)
        latent_means = predict_latent(surrogate, mcs.points)
        pipe = LatentExcursionPipeline(surrogate.pca, config.target)
        counts, chi_counts = pipe.counts_chi(latent_means)
        estimate = estimate_from_counts(testbed.mesh, counts, chi_counts, config.n_mcs, config.alpha)
        chi = chi_counts / config.n_mcs

        bundle = realize_fields(surrogate, mcs, config.n_rea, seed=iter_seeds[2 * k + 1])
        q_lo, q_hi, rho_draws = rho_star_band(bundle, config.target, config.alpha,
                                              config.beta_lo, config.beta_hi)

        record = IterationRecord(
            budget=k, n_train=doe.shape[0], d_z=surrogate.d_z,
            chosen=doe[-1].copy() if k > 0 else None,
            rho_star=estimate.rho_star, q_lo=q_lo, q_hi=q_hi,
            region_volume=estimate.region.volume(),
        )
        _oracle_metrics(record, estimate, oracle)
        record.seconds = time.perf_counter() - t0
        records.append(record)
        history.final_estimate = estimate
        history.final_surrogate = surrogate
        history.doe = SampleSet(doe, "active")

        if k == config.budget:
            break
        _, u_star = maxmin_acquire(mcs, doe, chi, (q_lo, q_hi), testbed.input_dist, rho_draws)
        y_star = _run_simulator(testbed, u_star[None, :], history)
        n_calls += 1
        doe = np.vstack([doe, u_star])
        outputs = np.vstack([outputs, y_star])

    history.n_sim_calls = n_calls
    return history


def run_lhs_baseline(testbed, config: LearningConfig, oracle=None) -> LearningHistory:
    """Space-filling baseline: a fresh LHS of growing size at every budget step.

    The realization band is not part of this method, so the band columns stay
    NaN.  Total simulator calls are sum(n_init + k) over the budget steps.
    """
    ss = np.random.SeedSequence(config.seed)
    seeds = ss.spawn(2 * (config.budget + 1))
    mcs = mc_sample(testbed.input_dist, config.n_mcs, config.mcs_seed)

    records = []
    history = LearningHistory("lhs", records, None, SampleSet(np.zeros((0, testbed.mesh.dim))), None, 0)
    n_calls = 0
    for k in range(config.budget + 1):
        t0 = time.perf_counter()
        doe = lhs_sample(testbed.lhs_box, config.n_init + k, seeds[2 * k]).points
        outputs = _run_simulator(testbed, doe, history)
        n_calls += doe.shape[0]
        surrogate = surrogate_train(SampleSet(doe, "lhs"), outputs, config.surrogate,
                                    seed=seeds[2 * k + 1], mesh=testbed.mesh)
        latent_means = predict_latent(surrogate, mcs.points)
        pipe = LatentExcursionPipeline(surrogate.pca, config.target)
        counts, chi_counts = pipe.counts_chi(latent_means)
        estimate = estimate_from_counts(testbed.mesh, counts, chi_counts, config.n_mcs, config.alpha)

        record = IterationRecord(
            budget=k, n_train=doe.shape[0], d_z=surrogate.d_z, chosen=None,
            rho_star=estimate.rho_star, q_lo=np.nan, q_hi=np.nan,
            region_volume=estimate.region.volume(),
        )
        _oracle_metrics(record, estimate, oracle)
        record.seconds = time.perf_counter() - t0
        records.append(record)
        history.final_estimate = estimate
        history.final_surrogate = surrogate
        history.doe = SampleSet(doe, "lhs")
        history.n_sim_calls = n_calls
    return history


def run_kde_pce_baseline(testbed, config: LearningConfig, oracle=None) -> LearningHistory:
    """Baseline from the literature: frozen KDE coverage plus a PCE of the auxiliary variable.

    Initial samples are drawn from the input distribution; their exact
    auxiliary values anchor a sparse PCE that predicts the auxiliary variable
    over the Monte Carlo population.  Each iteration runs the simulator at
    the not-yet-evaluated sample whose prediction is closest to the current
    threshold, replaces the prediction with the exact value, and refits.  The
    coverage estimate never changes after initialization.
    """
    ss = np.random.SeedSequence(config.seed)
    init_seed = ss.spawn(1)[0]
    mcs = mc_sample(testbed.input_dist, config.n_mcs, config.mcs_seed)

    init = mc_sample(testbed.input_dist, config.n_init, init_seed)
    records = []
    history = LearningHistory("kde-pce", records, None, init, None, 0)
    outputs = _run_simulator(testbed, init.points, history)
    n_calls = config.n_init

    kde = KdeExceedance(testbed.mesh, outputs)
    coverage = kde.coverage(config.target)

    def exact_chi(fields_rows) -> np.ndarray:
        exc = config.target.contains(fields_rows)
        vals = np.where(exc, coverage.values[None, :], np.inf).min(axis=1)
        return np.where(np.isfinite(vals), vals, 1.0)

    train_u = init.points.copy()
    train_chi = exact_chi(outputs)
    evaluated = {}  # mcs index -> exact chi

    for k in range(config.budget + 1):
        t0 = time.perf_counter()
        pce = fit_pce(train_u, train_chi, testbed.input_dist)
        chi_pred = pce.predict(mcs.points)
        for i, v in evaluated.items():
            chi_pred[i] = v
        rho = empirical_quantile(chi_pred, 1.0 - config.alpha)
        region_mask = coverage.values >= rho
        estimate = ConfidenceEstimate(
            coverage, chi_pred.copy(), float(rho),
            _region_of(testbed.mesh, region_mask), config.alpha, config.n_mcs,
        )
        record = IterationRecord(
            budget=k, n_train=train_u.shape[0], d_z=0,
            chosen=train_u[-1].copy() if k > 0 else None,
            rho_star=float(rho), q_lo=np.nan, q_hi=np.nan,
            region_volume=estimate.region.volume(),
        )
        _oracle_metrics(record, estimate, oracle)
        record.seconds = time.perf_counter() - t0
        records.append(record)
        history.final_estimate = estimate
        history.doe = SampleSet(train_u, "active")
        history.n_sim_calls = n_calls

        if k == config.budget:
            break
        free = np.setdiff1d(np.arange(config.n_mcs), np.fromiter(evaluated, dtype=int, count=len(evaluated)))
        pick = int(free[np.argmin(np.abs(chi_pred[free] - rho))])
        y_new = _run_simulator(testbed, mcs.points[pick][None, :], history)
        n_calls += 1
        chi_new = float(exact_chi(y_new)[0])
        evaluated[pick] = chi_new
        train_u = np.vstack([train_u, mcs.points[pick]])
        train_chi = np.append(train_chi, chi_new)
    return history


def _region_of(mesh, mask):
    from .fields import NodeSet

    return NodeSet(mesh, mask)


def _run_simulator(testbed, points, history):
    try:
        return testbed.fields(points)
    except Exception as exc:
        logger.error("simulator failed at %s: %s", np.atleast_2d(points)[0], exc)
        raise SimulatorError(f"simulator failed at {np.atleast_2d(points)[0]}: {exc}", history) from exc
