"""Experiment runner: configuration, repetition orchestration, reports and plots.

Subcommands: ``run`` (repetitions of one learning method plus aggregated
convergence tables, metrics and SVG plots), ``metrics`` (recompute the report
from run artifacts), ``chimap`` (auxiliary-variable maps over a 2-D input
grid), ``reference`` (build/cache the true-simulator reference), ``schema``
(print the config JSON schema).

Exit codes: 0 success, 1 configuration error, 2 runtime/numerical error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .active import (
    LearningConfig,
    SimulatorError,
    run_active_learning,
    run_kde_pce_baseline,
    run_lhs_baseline,
)
from .excursion import LatentExcursionPipeline
from .fields import NodeSet, TargetInterval
from .ioutil import write_csv
from .metrics import (
    build_report,
    doe_membership_probability,
    effective_containment,
    gp_membership_probability,
    symdiff_volume,
)
from .probinput import empirical_quantile, lhs_sample, mc_sample, SampleSet
from .surrogate import SurrogateConfig, load_surrogate, predict_latent, realize_fields, save_surrogate, surrogate_train
from .svgplot import Series, line_plot_svg
from .testbeds import default_cache_dir, get_testbed, reference_cache_path, reference_solution

logger = logging.getLogger("exconf")

METHODS = {"maxmin": run_active_learning, "lhs": run_lhs_baseline, "kde-pce": run_kde_pce_baseline}

CONFIG_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "exconf experiment configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "testbed": {"type": "string", "enum": ["sand-piles", "smoke-1d"]},
        "method": {"type": "string", "enum": ["maxmin", "lhs", "kde-pce"]},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "target_low": {"type": ["number", "null"]},
        "target_high": {"type": ["number", "null"]},
        "n_init": {"type": "integer", "minimum": 2},
        "budget": {"type": "integer", "minimum": 0},
        "n_mcs": {"type": "integer", "minimum": 1},
        "n_rea": {"type": "integer", "minimum": 1},
        "n_rea_metrics": {"type": "integer", "minimum": 1},
        "repetitions": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "mcs_seed": {"type": "integer", "minimum": 0},
        "kernel": {"type": "string", "enum": ["squared-exponential", "matern-5/2"]},
        "nugget": {"type": "number", "minimum": 0},
        "restarts": {"type": "integer", "minimum": 1},
        "ric_threshold": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "kl_energy": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "max_anchors": {"type": "integer", "minimum": 1},
        "beta_lo": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "beta_hi": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "workers": {"type": ["integer", "null"], "minimum": 1},
        "oracle": {"type": "boolean"},
        "out_dir": {"type": "string"},
        "cache_dir": {"type": ["string", "null"]},
    },
}


@dataclass
class ExperimentConfig:
    testbed: str = "sand-piles"
    method: str = "maxmin"
    alpha: float = 0.9
    target_low: float | None = 1.03
    target_high: float | None = None
    n_init: int = 20
    budget: int = 60
    n_mcs: int = 10_000
    n_rea: int = 100
    n_rea_metrics: int = 200
    repetitions: int = 20
    seed: int = 7
    mcs_seed: int = 1000
    kernel: str = "squared-exponential"
    nugget: float = 1e-8
    restarts: int = 20
    ric_threshold: float = 0.999
    kl_energy: float = 0.99
    max_anchors: int = 512
    beta_lo: float = 0.1
    beta_hi: float = 0.9
    workers: int | None = None
    oracle: bool = True
    out_dir: str = "exconf-run"
    cache_dir: str | None = None

    @staticmethod
    def from_dict(data: dict) -> "ExperimentConfig":
        import jsonschema

        jsonschema.validate(data, CONFIG_SCHEMA)
        return ExperimentConfig(**data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def target(self) -> TargetInterval:
        low = -np.inf if self.target_low is None else self.target_low
        high = np.inf if self.target_high is None else self.target_high
        return TargetInterval(low, high)

    def surrogate_config(self) -> SurrogateConfig:
        return SurrogateConfig(self.kernel, self.nugget, self.restarts,
                               self.ric_threshold, self.kl_energy, self.max_anchors)

    def learning_config(self, rep_seed: int) -> LearningConfig:
        return LearningConfig(
            alpha=self.alpha, target=self.target, n_init=self.n_init, budget=self.budget,
            n_mcs=self.n_mcs, n_rea=self.n_rea, beta_lo=self.beta_lo, beta_hi=self.beta_hi,
            surrogate=self.surrogate_config(), seed=int(rep_seed), mcs_seed=self.mcs_seed,
        )

    def resolved_cache_dir(self) -> Path:
        return Path(self.cache_dir) if self.cache_dir else default_cache_dir()

    def rep_seeds(self) -> np.ndarray:
        return np.random.SeedSequence(self.seed).generate_state(self.repetitions, dtype=np.uint32)


def load_config(path=None, overrides=None) -> ExperimentConfig:
    data = {}
    if path:
        data = json.loads(Path(path).read_text())
    if overrides:
        data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(data)


# ---------------------------------------------------------------------------
# run


def _run_dir(out_dir, rep) -> Path:
    return Path(out_dir) / f"run_{rep:03d}"


def _run_one_repetition(payload: dict) -> dict:
    """Worker entry: run one repetition and write its artifact directory."""
    config = ExperimentConfig(**payload["config"])
    rep = payload["rep"]
    testbed = get_testbed(config.testbed)
    oracle = None
    if config.oracle:
        oracle = reference_solution(testbed, config.alpha, config.target, config.n_mcs,
                                    config.mcs_seed, cache_dir=config.resolved_cache_dir())
    runner = METHODS[config.method]
    hist = runner(testbed, config.learning_config(payload["rep_seed"]), oracle=oracle)

    run_dir = _run_dir(config.out_dir, rep)
    run_dir.mkdir(parents=True, exist_ok=True)
    hist.to_csv(run_dir / "history.csv")
    hist.timings_to_csv(run_dir / "timings.csv")
    hist.doe.to_csv(run_dir / "doe.csv")
    est = hist.final_estimate
    est.region.to_csv(run_dir / "region.csv")
    est.coverage.to_csv(run_dir / "coverage.csv")
    summary = est.summary()
    last = hist.records[-1]
    summary.update(alpha_hat=_jsonable(last.alpha_hat), alpha_rel_err=_jsonable(last.alpha_rel_err),
                   symdiff_volume=_jsonable(last.symdiff_volume), method=config.method,
                   n_sim_calls=hist.n_sim_calls, rep=rep)
    (run_dir / "estimate.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if hist.final_surrogate is not None:
        save_surrogate(hist.final_surrogate, run_dir / "surrogate.bin")

    return {
        "rep": rep,
        "alpha_hat": [r.alpha_hat for r in hist.records],
        "alpha_rel_err": [r.alpha_rel_err for r in hist.records],
        "symdiff": [r.symdiff_volume for r in hist.records],
        "region_volume": [r.region_volume for r in hist.records],
        "n_train": [r.n_train for r in hist.records],
        "budget": [r.budget for r in hist.records],
    }


def _jsonable(x):
    x = float(x)
    return None if np.isnan(x) else x


def run_experiment(config: ExperimentConfig) -> Path:
    """Run all repetitions, then aggregate convergence tables, metrics and plots."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")

    testbed = get_testbed(config.testbed)
    if config.oracle:
        ref = reference_solution(testbed, config.alpha, config.target, config.n_mcs,
                                 config.mcs_seed, cache_dir=config.resolved_cache_dir())
        (out / "reference_summary.json").write_text(
            json.dumps({**ref.estimate.summary(), "alpha_mcs": ref.alpha_mcs}, indent=2, sort_keys=True) + "\n")

    seeds = config.rep_seeds()
    payloads = [{"config": config.to_dict(), "rep": r, "rep_seed": int(seeds[r])}
                for r in range(config.repetitions)]
    workers = config.workers or os.cpu_count() or 1
    workers = min(workers, config.repetitions)
    if workers <= 1:
        summaries = [_run_one_repetition(p) for p in payloads]
    else:
        # cap BLAS threads in children; repetitions are the parallel axis
        saved = {k: os.environ.get(k) for k in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")}
        os.environ.update(OMP_NUM_THREADS="1", OPENBLAS_NUM_THREADS="1", MKL_NUM_THREADS="1")
        try:
            import multiprocessing as mp

            with ProcessPoolExecutor(max_workers=workers, mp_context=mp.get_context("spawn")) as pool:
                summaries = list(pool.map(_run_one_repetition, payloads))
        finally:
            for k, v in saved.items():
                if v is None:
                    os.environ.pop(k, None)
                else:
                    os.environ[k] = v

    summaries.sort(key=lambda s: s["rep"])
    _write_convergence(out, summaries)
    _write_plots(out, summaries)
    if config.oracle:
        compute_metrics(out, config)
    return out


def _band(values):
    vals = [v for v in values if np.isfinite(v)]
    if not vals:
        return np.nan, np.nan, np.nan
    return (empirical_quantile(vals, 0.5), empirical_quantile(vals, 0.1), empirical_quantile(vals, 0.9))


def _write_convergence(out: Path, summaries) -> None:
    budgets = summaries[0]["budget"]
    rows = []
    for i, b in enumerate(budgets):
        row = [b, summaries[0]["n_train"][i]]
        for key in ("alpha_rel_err", "symdiff", "region_volume"):
            med, lo, hi = _band([s[key][i] for s in summaries])
            row += [med, lo, hi]
        rows.append(row)
    header = ["budget", "n_train",
              "alpha_rel_err_median", "alpha_rel_err_q10", "alpha_rel_err_q90",
              "symdiff_median", "symdiff_q10", "symdiff_q90",
              "region_volume_median", "region_volume_q10", "region_volume_q90"]
    write_csv(out / "convergence.csv", header, rows)


def _write_plots(out: Path, summaries) -> None:
    plots = out / "plots"
    plots.mkdir(exist_ok=True)
    budgets = np.asarray(summaries[0]["budget"], dtype=float)
    for key, fname, ylabel in (
        ("alpha_rel_err", "alpha_error.svg", "relative containment error"),
        ("symdiff", "symdiff.svg", "symmetric difference volume"),
    ):
        med, lo, hi = [], [], []
        for i in range(len(budgets)):
            m, a, b = _band([s[key][i] for s in summaries])
            med.append(m), lo.append(a), hi.append(b)
        series = [Series(budgets, np.asarray(med), label="median", band=(np.asarray(lo), np.asarray(hi)))]
        line_plot_svg(plots / fname, series, title=ylabel, xlabel="added samples",
                      ylabel=ylabel, log_y=True)


# ---------------------------------------------------------------------------
# metrics


def _load_region(run_dir: Path, mesh) -> NodeSet:
    from .ioutil import read_csv_matrix

    data = read_csv_matrix(run_dir / "region.csv")
    return NodeSet(mesh, data[:, -1] > 0.5)


def compute_metrics(out_dir, config: ExperimentConfig) -> dict:
    """Aggregate per-run containment/symmetric-difference metrics and membership maps."""
    out = Path(out_dir)
    testbed = get_testbed(config.testbed)
    cache = config.resolved_cache_dir()
    ref_path = reference_cache_path(testbed, config.target, config.n_mcs, config.mcs_seed, cache)
    if not ref_path.exists():
        raise FileNotFoundError(
            f"reference oracle not cached at {ref_path}; run `exconf reference` "
            f"(or rerun with oracle enabled) first"
        )
    ref = reference_solution(testbed, config.alpha, config.target, config.n_mcs,
                             config.mcs_seed, cache_dir=cache)

    run_dirs = sorted(p for p in out.glob("run_*") if p.is_dir())
    if not run_dirs:
        raise FileNotFoundError(f"no run_* directories under {out}")
    regions, alpha_hats, symdiffs = [], [], []
    for rd in run_dirs:
        region = _load_region(rd, testbed.mesh)
        regions.append(region)
        alpha_hats.append(effective_containment(ref.excursions, region))
        symdiffs.append(symdiff_volume(ref.estimate.region, region))

    report = build_report(config.alpha, ref.alpha_mcs, alpha_hats, symdiffs,
                          testbed.mesh.total_volume)
    doe_field = doe_membership_probability(regions)
    doe_field.to_csv(out / "doe_membership.csv")
    report.extras["doe_membership_csv"] = "doe_membership.csv"
    report.extras["n_runs"] = len(run_dirs)
    report.extras["median_run_dir"] = run_dirs[report.median_run].name

    median_surrogate = run_dirs[report.median_run] / "surrogate.bin"
    if median_surrogate.exists():
        surrogate = load_surrogate(median_surrogate, testbed.mesh)
        mcs = mc_sample(testbed.input_dist, config.n_mcs, config.mcs_seed)
        gp_seed = np.random.SeedSequence((config.seed, 0xC0FFEE)).generate_state(1)[0]
        bundle = realize_fields(surrogate, mcs, config.n_rea_metrics, seed=int(gp_seed))
        gp_field = gp_membership_probability(bundle, config.target, config.alpha)
        gp_field.to_csv(out / "gp_membership.csv")
        report.extras["gp_membership_csv"] = "gp_membership.csv"
        trans = float(np.mean((gp_field.values > 0.05) & (gp_field.values < 0.95)))
        report.extras["gp_transition_zone_fraction"] = trans
    report.to_json(out / "metrics.json")
    return json.loads((out / "metrics.json").read_text())


# ---------------------------------------------------------------------------
# chi map


def compute_chimap(config: ExperimentConfig, resolution: int, out_dir, run_dir=None) -> Path:
    """True and surrogate auxiliary-variable maps over a regular 2-D input grid."""
    testbed = get_testbed(config.testbed)
    if testbed.lhs_box.shape[0] != 2:
        raise ValueError("chi maps need a 2-D input space")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = config.target

    axes = [np.linspace(lo, hi, resolution) for lo, hi in testbed.lhs_box]
    G1, G2 = np.meshgrid(axes[0], axes[1], indexing="ij")
    grid = np.column_stack([G1.ravel(), G2.ravel()])

    ref = reference_solution(testbed, config.alpha, config.target, config.n_mcs,
                             config.mcs_seed, cache_dir=config.resolved_cache_dir())
    chi_true = _chi_over_points(testbed.fields, grid, target, ref.estimate.coverage.values)
    write_csv(out / "chi_true.csv", ["u0", "u1", "chi"],
              ((grid[i, 0], grid[i, 1], chi_true[i]) for i in range(grid.shape[0])))

    if run_dir is not None:
        surrogate = load_surrogate(Path(run_dir) / "surrogate.bin", testbed.mesh)
    else:
        logger.info("no run directory given; training a fresh surrogate on an LHS of %d points",
                    config.n_init)
        doe = lhs_sample(testbed.lhs_box, config.n_init, config.seed).points
        surrogate = surrogate_train(SampleSet(doe), testbed.fields(doe), config.surrogate_config(),
                                    seed=config.seed, mesh=testbed.mesh)
    mcs = mc_sample(testbed.input_dist, config.n_mcs, config.mcs_seed)
    latent = predict_latent(surrogate, mcs.points)
    pipe = LatentExcursionPipeline(surrogate.pca, target)
    counts, chi_counts = pipe.counts_chi(latent)
    cov_surr = counts / config.n_mcs

    def surrogate_fields(pts):
        return (predict_latent(surrogate, pts) @ surrogate.pca.basis) + surrogate.pca.mean_field

    chi_surr = _chi_over_points(surrogate_fields, grid, target, cov_surr)
    write_csv(out / "chi_surrogate.csv", ["u0", "u1", "chi"],
              ((grid[i, 0], grid[i, 1], chi_surr[i]) for i in range(grid.shape[0])))
    return out


def _chi_over_points(fields_fn, points, target, coverage_values, chunk=512):
    out = np.empty(points.shape[0])
    for i in range(0, points.shape[0], chunk):
        mat = fields_fn(points[i:i + chunk])
        exc = target.contains(mat)
        masked = np.where(exc, coverage_values[None, :], np.inf)
        vals = masked.min(axis=1)
        out[i:i + chunk] = np.where(np.isfinite(vals), vals, 1.0)
    return out


# ---------------------------------------------------------------------------
# argument parsing / entry point


def _add_config_args(p):
    p.add_argument("--config", help="JSON config file (validated against the schema)")
    for name in ("testbed", "method", "kernel", "out-dir", "cache-dir"):
        p.add_argument(f"--{name}", dest=name.replace("-", "_"))
    for name in ("n-init", "budget", "n-mcs", "n-rea", "n-rea-metrics", "repetitions",
                 "seed", "mcs-seed", "restarts", "max-anchors", "workers"):
        p.add_argument(f"--{name}", dest=name.replace("-", "_"), type=int)
    for name in ("alpha", "target-low", "target-high", "nugget", "ric-threshold",
                 "kl-energy", "beta-lo", "beta-hi"):
        p.add_argument(f"--{name}", dest=name.replace("-", "_"), type=float)
    p.add_argument("--no-oracle", action="store_true", help="skip reference-based metrics")


def _config_from_args(args) -> ExperimentConfig:
    keys = [f.name for f in dataclasses.fields(ExperimentConfig)]
    overrides = {k: getattr(args, k, None) for k in keys if getattr(args, k, None) is not None}
    if getattr(args, "no_oracle", False):
        overrides["oracle"] = False
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="exconf",
                                     description="Excursion-set confidence regions with active learning")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment (repetitions + reports)")
    _add_config_args(p_run)

    p_met = sub.add_parser("metrics", help="recompute the metrics report for a run directory")
    p_met.add_argument("run_dir", help="output directory of a previous `exconf run`")
    p_met.add_argument("--cache-dir", dest="cache_dir")

    p_chi = sub.add_parser("chimap", help="auxiliary-variable maps over the 2-D input grid")
    _add_config_args(p_chi)
    p_chi.add_argument("--resolution", type=int, default=81)
    p_chi.add_argument("--run-dir", dest="run_dir", help="load the trained surrogate from this run")

    p_ref = sub.add_parser("reference", help="build and cache the true-simulator reference")
    _add_config_args(p_ref)

    sub.add_parser("schema", help="print the configuration JSON schema")

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    try:
        if args.command == "schema":
            print(json.dumps(CONFIG_SCHEMA, indent=2, sort_keys=True))
            return 0
        if args.command == "run":
            config = _config_from_args(args)
            out = run_experiment(config)
            print(f"artifacts written to {out}")
            return 0
        if args.command == "metrics":
            run_dir = Path(args.run_dir)
            config = ExperimentConfig.from_dict(json.loads((run_dir / "config.json").read_text()))
            if args.cache_dir:
                config.cache_dir = args.cache_dir
            report = compute_metrics(run_dir, config)
            print(json.dumps(report, indent=2, sort_keys=True))
            return 0
        if args.command == "chimap":
            config = _config_from_args(args)
            out = compute_chimap(config, args.resolution, Path(config.out_dir), run_dir=args.run_dir)
            print(f"chi maps written to {out}")
            return 0
        if args.command == "reference":
            config = _config_from_args(args)
            testbed = get_testbed(config.testbed)
            ref = reference_solution(testbed, config.alpha, config.target, config.n_mcs,
                                     config.mcs_seed, cache_dir=config.resolved_cache_dir())
            out = Path(config.out_dir)
            out.mkdir(parents=True, exist_ok=True)
            ref.estimate.coverage.to_csv(out / "reference_coverage.csv")
            ref.estimate.region.to_csv(out / "reference_region.csv")
            summary = {**ref.estimate.summary(), "alpha_mcs": ref.alpha_mcs,
                       "cache_path": str(ref.cache_path)}
            (out / "reference_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
            print(json.dumps(summary, indent=2, sort_keys=True))
            return 0
    except SimulatorError as exc:
        print(f"simulator failure: {exc}", file=sys.stderr)
        return 2
    except _schema_error() as exc:
        print(f"config error at {list(exc.absolute_path)}: {exc.message}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    return 0


def _schema_error():
    import jsonschema

    return jsonschema.ValidationError


if __name__ == "__main__":
    sys.exit(main())
