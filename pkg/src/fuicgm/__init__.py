"""Pointwise mixed models, smoothing and bootstrap joint inference for
multilevel functional data such as nightly CGM glucose curves."""

from .data import (
    FunctionalDataset,
    PointwiseDesign,
    TimeGrid,
    ValidationReport,
    design_at,
    validate_dataset,
)
from .datagen import GeneratorConfig, hypnos_config, simulate_dataset
from .inference import (
    BootstrapEnsemble,
    FuiResult,
    JointBand,
    TestResult,
    TestSpec,
    cluster_bootstrap,
    global_pvalue,
    joint_band,
    joint_critical_value,
    pointwise_band,
    run_fui,
)
from .ingest import IngestReport, ingest_files
from .lmm import (
    PointwiseFit,
    PointwiseFitSeries,
    SingularDesignError,
    SolverOptions,
    fit_all_timepoints,
    fit_pointwise,
    reml_objective,
)
from .smoothing import CoefficientFunction, SmoothConfig, smooth_curve

__version__ = "0.1.0"
