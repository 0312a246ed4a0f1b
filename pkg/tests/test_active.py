import numpy as np
import pytest

from exconf.active import (
    LearningConfig,
    SimulatorError,
    maxmin_acquire,
    rho_star_band,
    run_active_learning,
    run_lhs_baseline,
)
from exconf.excursion import chi_hat, coverage_probability, estimate_rho_star, excursion_set
from exconf.fields import Field, TargetInterval
from exconf.probinput import InputDistribution, Normal, SampleSet, Uniform, empirical_quantile, lhs_sample, mc_sample
from exconf.surrogate import SurrogateConfig, realize_fields, surrogate_train
from exconf.testbeds import Smoke1D, reference_solution

FAST = SurrogateConfig(restarts=3, max_anchors=64)


def small_config(**kw):
    defaults = dict(alpha=0.9, target=TargetInterval(1.2, np.inf), n_init=6, budget=3,
                    n_mcs=400, n_rea=20, surrogate=FAST, seed=0, mcs_seed=99)
    defaults.update(kw)
    return LearningConfig(**defaults)


@pytest.fixture(scope="module")
def smoke():
    return Smoke1D(n_nodes=31)


# ---------------------------------------------------------------------------
# rho_star_band


@pytest.fixture(scope="module")
def trained_smoke(smoke):
    doe = lhs_sample(smoke.lhs_box, 10, seed=0).points
    return surrogate_train(SampleSet(doe), smoke.fields(doe), FAST, seed=0, mesh=smoke.mesh)


def test_band_single_realization(smoke, trained_smoke):
    pts = mc_sample(smoke.input_dist, 150, seed=1)
    bundle = realize_fields(trained_smoke, pts, n_rea=1, seed=2)
    q_lo, q_hi, rho = rho_star_band(bundle, smoke.default_target, 0.9)
    assert rho.shape == (1,)
    assert q_lo == q_hi == rho[0]


def test_band_zero_variance_realizations(smoke, trained_smoke):
    pts = mc_sample(smoke.input_dist, 150, seed=3)
    bundle = realize_fields(trained_smoke, pts, n_rea=5, seed=4)
    frozen = np.repeat(bundle.latent[:1], 5, axis=0)  # identical realizations
    bundle2 = type(bundle)(frozen, bundle.point_set, bundle.pca)
    q_lo, q_hi, rho = rho_star_band(bundle2, smoke.default_target, 0.9)
    assert q_lo == q_hi
    assert np.all(rho == rho[0])


def test_band_matches_brute_force_recomputation(smoke, trained_smoke):
    # independent oracle: per realization, rebuild fields, coverage, chi, rho
    pts = mc_sample(smoke.input_dist, 200, seed=5)
    bundle = realize_fields(trained_smoke, pts, n_rea=30, seed=6)
    target = smoke.default_target
    q_lo, q_hi, rho = rho_star_band(bundle, target, 0.9, 0.1, 0.9)
    rho_oracle = []
    for j in range(30):
        fields = bundle.fields_of(j).astype(np.float32).astype(float)
        cov = coverage_probability(fields, target, mesh=smoke.mesh)
        chis = []
        for i in range(200):
            exc = excursion_set(Field(smoke.mesh, fields[i]), target)
            chis.append(chi_hat(exc, cov))
        rho_oracle.append(estimate_rho_star(chis, 0.9))
    assert np.allclose(rho, rho_oracle, atol=0)
    assert q_lo == empirical_quantile(rho_oracle, 0.1)
    assert q_hi == empirical_quantile(rho_oracle, 0.9)


# ---------------------------------------------------------------------------
# maxmin_acquire


def uniform_dist():
    return InputDistribution((Uniform(0.0, 1.0), Uniform(0.0, 1.0)))


def test_single_feasible_candidate():
    cand = SampleSet(np.array([[0.1, 0.1], [0.5, 0.5], [0.9, 0.9]]))
    chi = np.array([0.0, 0.5, 1.0])
    idx, pt = maxmin_acquire(cand, np.array([[0.0, 0.0]]), chi, (0.4, 0.6), uniform_dist())
    assert idx == 1
    assert np.array_equal(pt, [0.5, 0.5])


def test_uniform_density_reduces_to_maxmin_distance():
    rng = np.random.default_rng(7)
    cand = SampleSet(rng.random((40, 2)))
    doe = rng.random((5, 2))
    chi = rng.random(40)
    idx, _ = maxmin_acquire(cand, doe, chi, (0.0, 1.0), uniform_dist())
    from scipy.spatial.distance import cdist

    d = cdist(cand.points, doe).min(axis=1)
    assert idx == int(np.argmax(d))


def test_acquire_matches_double_loop_oracle():
    rng = np.random.default_rng(8)
    dist = InputDistribution((Normal(0.0, 1.0), Normal(0.0, 1.0)))
    for trial in range(5):
        cand = SampleSet(rng.normal(0, 1, (50, 2)))
        doe = rng.normal(0, 1, (5, 2))
        chi = rng.random(50)
        band = tuple(np.sort(rng.random(2)))
        idx, _ = maxmin_acquire(cand, doe, chi, band, dist, rho_star_draws=rng.random(30))
        # brute force double loop
        best, best_score = None, -1.0
        for i, u in enumerate(cand.points):
            feas_lo, feas_hi = band
            if not (feas_lo <= chi[i] <= feas_hi):
                continue
            dmin = min(np.sqrt(((u - v) ** 2).sum()) for v in doe)
            score = dist.pdf(u[None])[0] ** 0.5 * dmin
            if score > best_score:
                best, best_score = i, score
        if best is None:
            continue
        assert idx == best


def test_acquire_never_returns_doe_point():
    rng = np.random.default_rng(9)
    cand = SampleSet(rng.random((30, 2)))
    doe = cand.points[[3, 7, 11]]
    chi = np.full(30, 0.5)
    idx, _ = maxmin_acquire(cand, doe, chi, (0.0, 1.0), uniform_dist())
    assert idx not in (3, 7, 11)


def test_acquire_falls_back_when_feasible_set_is_all_doe_points():
    # the only candidates inside the band are already in the design: the
    # acquisition must widen rather than return a duplicate
    rng = np.random.default_rng(10)
    cand = SampleSet(rng.random((20, 2)))
    doe = cand.points[[4, 5]]
    chi = np.full(20, 0.0)
    chi[[4, 5]] = 0.5  # band only covers the two design points
    draws = np.linspace(0.0, 1.0, 50)
    idx, _ = maxmin_acquire(cand, doe, chi, (0.5, 0.5), uniform_dist(), rho_star_draws=draws)
    assert idx not in (4, 5)
    # without draws the unconstrained stage still avoids duplicates
    idx2, _ = maxmin_acquire(cand, doe, chi, (0.5, 0.5), uniform_dist())
    assert idx2 not in (4, 5)


def test_degenerate_band_is_exact_level_set():
    cand = SampleSet(np.array([[0.1, 0.1], [0.2, 0.2], [0.8, 0.8]]))
    chi = np.array([0.3, 0.5, 0.5])
    idx, _ = maxmin_acquire(cand, np.array([[0.0, 0.0]]), chi, (0.5, 0.5), uniform_dist())
    assert idx == 2  # farthest among the chi == 0.5 level set


def test_empty_feasible_set_fallbacks(caplog):
    import logging

    cand = SampleSet(np.array([[0.2, 0.2], [0.8, 0.8]]))
    chi = np.array([0.1, 0.2])
    draws = np.linspace(0.05, 0.25, 30)
    with caplog.at_level(logging.WARNING, logger="exconf"):
        idx, _ = maxmin_acquire(cand, np.array([[0.0, 0.0]]), chi, (0.9, 0.95), uniform_dist(),
                                rho_star_draws=draws)
    assert idx == 1  # widened band (0.01, 0.99 quantiles of draws) covers both
    with caplog.at_level(logging.WARNING, logger="exconf"):
        idx2, _ = maxmin_acquire(cand, np.array([[0.0, 0.0]]), chi, (0.9, 0.95), uniform_dist(),
                                 rho_star_draws=np.full(30, 0.9))
    assert idx2 == 1  # unconstrained fallback


# ---------------------------------------------------------------------------
# learning loops


def test_budget_zero_single_record(smoke):
    cfg = small_config(budget=0)
    hist = run_active_learning(smoke, cfg)
    assert len(hist.records) == 1
    assert hist.records[0].chosen is None
    assert hist.records[0].n_train == cfg.n_init
    assert hist.n_sim_calls == cfg.n_init
    assert hist.final_estimate is not None


def test_doe_grows_by_one_each_iteration(smoke):
    cfg = small_config(budget=3)
    hist = run_active_learning(smoke, cfg)
    assert [r.n_train for r in hist.records] == [6, 7, 8, 9]
    assert [r.budget for r in hist.records] == [0, 1, 2, 3]
    assert hist.n_sim_calls == 9
    for r in hist.records[1:]:
        assert r.chosen is not None
    assert len(hist.doe) == 9


def test_active_learning_bit_reproducible(smoke):
    cfg = small_config(budget=2)
    h1 = run_active_learning(smoke, cfg)
    h2 = run_active_learning(smoke, cfg)
    assert np.array_equal(h1.doe.points, h2.doe.points)
    for r1, r2 in zip(h1.records, h2.records):
        assert r1.rho_star == r2.rho_star
        assert r1.q_lo == r2.q_lo and r1.q_hi == r2.q_hi
        assert r1.region_volume == r2.region_volume
    assert np.array_equal(h1.final_estimate.coverage.values, h2.final_estimate.coverage.values)


def test_oracle_columns_filled(smoke, tmp_path):
    ref = reference_solution(smoke, 0.9, TargetInterval(1.2, np.inf), 400, seed=99, cache_dir=tmp_path)
    cfg = small_config(budget=1)
    hist = run_active_learning(smoke, cfg, oracle=ref)
    for r in hist.records:
        assert 0.0 <= r.alpha_hat <= 1.0
        assert np.isfinite(r.symdiff_volume)


def test_simulator_failure_raises_with_history(smoke):
    class Failing:
        name = "failing"
        mesh = smoke.mesh
        input_dist = smoke.input_dist
        lhs_box = smoke.lhs_box
        default_target = smoke.default_target

        def __init__(self):
            self.calls = 0

        def fields(self, pts):
            self.calls += 1
            if self.calls > 1:
                raise RuntimeError("crash")
            return smoke.fields(pts)

    cfg = small_config(budget=2)
    with pytest.raises(SimulatorError) as err:
        run_active_learning(Failing(), cfg)
    assert err.value.history is not None
    assert len(err.value.history.records) == 1  # initial state was recorded


def test_lhs_baseline_counts_and_schema(smoke):
    cfg = small_config(budget=3)
    hist = run_lhs_baseline(smoke, cfg)
    assert [r.n_train for r in hist.records] == [6, 7, 8, 9]
    assert hist.n_sim_calls == 6 + 7 + 8 + 9
    for r in hist.records:
        assert np.isnan(r.q_lo) and np.isnan(r.q_hi)
        assert r.chosen is None


def test_history_csv_schema(tmp_path, smoke):
    cfg = small_config(budget=1)
    hist = run_active_learning(smoke, cfg)
    hist.to_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == ("budget,n_train,d_z,rho_star,q_lo,q_hi,region_volume,"
                       "alpha_hat,alpha_rel_err,symdiff_volume,u0")
    assert len(lines) == 3
    hist.timings_to_csv(tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "budget,seconds"
