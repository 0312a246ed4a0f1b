"""Confidence regions for excursion sets of simulators with functional outputs.

The package combines a PCA + Gaussian-process surrogate for expensive
field-valued simulators with a max-min active-learning strategy that targets
the Vorob'ev threshold of the excursion-set confidence region.
"""

from .fields import (
    Field,
    Mesh,
    MeshMismatchError,
    NodeSet,
    TargetInterval,
    set_volume,
    symmetric_difference,
)
from .probinput import (
    InputDistribution,
    Normal,
    SampleSet,
    TruncatedNormal,
    Uniform,
    empirical_quantile,
    lhs_sample,
    mc_sample,
)
from .pca import PcaModel, pca_fit, pca_project, pca_reconstruct
from .gp import GpFitError, GpModel, Kernel, PathSampler, build_path_sampler, gp_fit, gp_predict, sample_conditioned_paths
from .surrogate import FunctionalSurrogate, RealizationBundle, SurrogateConfig, predict_field, realize_fields, surrogate_train
from .excursion import (
    ConfidenceEstimate,
    PackedSets,
    chi_hat,
    confidence_region,
    coverage_probability,
    estimate_rho_star,
    excursion_set,
    vorobev_quantile,
)
from .active import (
    LearningConfig,
    LearningHistory,
    maxmin_acquire,
    rho_star_band,
    run_active_learning,
    run_kde_pce_baseline,
    run_lhs_baseline,
)
from .metrics import (
    MetricsReport,
    doe_membership_probability,
    effective_containment,
    gp_membership_probability,
    select_median_doe,
    symdiff_volume,
)
from .testbeds import SandPiles, Smoke1D, get_testbed, reference_solution

__version__ = "0.1.0"
