"""Simulation and inference for the wave equation with fractional-white noise."""

__version__ = "0.1.0"

from .kernels import (  # noqa: E402
    GridConstraintError,
    HurstParam,
    PhysicalParams,
    RectGrid,
    SpaceTimePoint,
    field_cov_white,
    increment_cov,
    increment_cov_psi,
    phi,
    psi1,
    psi2,
    rect_increment_cov,
    rect_increment_cov_expanded,
    temporal_cov,
)
from .sampler import (  # noqa: E402
    CovarianceModel,
    NotPositiveDefiniteError,
    SeedSpec,
    build_rect_model,
    build_temporal_model,
    quadratic_form_cumulant,
    sample_increments,
    wick_second_moment,
)
from .variations import VariationStatistic, rect_variation, temporal_variation  # noqa: E402
from .estimators import (  # noqa: E402
    EstimateReport,
    estimate_c,
    estimate_c_rect,
    estimate_hurst,
    estimate_p,
    estimate_q,
)
from .asymptotics import (  # noqa: E402
    clt_rate,
    limiting_cumulant,
    limiting_variance_high,
    sigma2,
    temporal_second_moment,
)
from .montecarlo import ExperimentConfig, ExperimentReport, run_experiment  # noqa: E402
