"""pamux: parametric multiplexing of optical images and measurement reduction.

The package simulates a pump-driven nonlinear medium in which two coupled
three-wave processes copy an input image into three correlated spectral
arms, models their acquisition by pixelated sensors, and reconstructs the
object by statistically optimal measurement reduction with box constraints
and sparsity thresholding.
"""

from .config import (
    ExperimentConfig,
    config_from_mapping,
    default_config,
    load_config,
    parse_config_text,
    parse_quantity,
)
from .errors import (
    ConvergenceError,
    DegenerateCouplingError,
    DegenerateModelError,
    EstimabilityError,
    FormatError,
    ModelInconsistencyError,
    NoZeroCrossingError,
    NumericError,
    PamuxError,
    ParameterError,
)
from .experiment import (
    ExperimentReport,
    ReportRow,
    SummaryRow,
    best_single_arm,
    build_models,
    build_object,
    run_experiment,
    seed_generator,
    write_report_files,
)
from .measurement import (
    BlockNoiseCovariance,
    MeasurementModel,
    SensorModel,
    assemble_forward,
    assemble_noise_covariance,
    build_measurement_model,
    conversion_matrix,
    sensor_matrix,
    simulate_measurement,
)
from .metrics import metrics, mse, snr, ssim
from .optics import (
    CrystalParams,
    GainMap,
    J_METRIC,
    OpticalGeometry,
    TransferMatrix,
    coupling_generator,
    critical_lengths,
    gain_map,
    pixel_q_map,
    transfer_grid,
    transfer_matrix,
    transfer_matrix_axial,
    transfer_matrix_grid,
)
from .pgm import load_image, load_object, save_image, write_arm_values_csv
from .phantoms import builtin_phantom
from .photon_stats import (
    ObjectImage,
    PixelStatistics,
    co_registered_counts,
    etendue_factor,
    mean_photon_numbers,
    photon_covariances,
    photon_variances,
    pixel_covariance_matrix,
    scale_ratio,
    statistics_coefficients,
)
from .reduction import (
    EstimabilityResult,
    ReductionConfig,
    ReductionOutcome,
    ReductionPlan,
    estimability_check,
    get_reduction_plan,
    linear_reduction,
    mahalanobis_project,
    reduce_with_sparsity,
    reduce_with_sparsity_multi,
    refine_with_constraints,
    threshold_components,
)
from .transforms import (
    dct_forward,
    dct_inverse,
    haar_forward,
    haar_inverse,
    pad_to_pow2,
    transform_pair,
    transformed_variances,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
