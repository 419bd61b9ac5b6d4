"""Testing equality of latent distributions up to location and scale from noisy panel estimates."""
from .dgp import DgpConfig, GroundTruth, InputProcess, LatentDistSpec, NoiseSpec, generate_panel
from .hpj import DebiasedCdf, DebiasedScalar, debiased_cdf, debiased_mean, debiased_variance, hpj_combine
from .kstest import (
    CellSummary,
    DebiasedKSTest,
    DegenerateVarianceError,
    TestResult,
    bootstrap_test,
    ks_statistic,
    validity_ratio,
)
from .panel import (
    CleaningConfig,
    CleaningReport,
    FirmSeries,
    PanelDataset,
    clean_panel,
    filter_min_periods,
    load_panel,
    split_halves,
)
from .prodfn import ProductionEstimate, ProductionFunction, estimate_tfp, tfp_estimates

__version__ = "0.1.0"
