"""Simulation of a heralded-photon B92 time-bin experiment.

Time-tag streams flow from a parametric pair source through imperfect optics
into detectors and a time tagger; coincidence analysis sifts the key,
optimizes the windows, and bootstraps run-time statistics.
"""

from .analysis import (
    BootstrapCurve,
    CoincidenceHistogram,
    InfeasibleWindowError,
    KeyMetrics,
    PeaksUnresolvedError,
    SiftedKey,
    WindowPair,
    bootstrap_sd_over_mean,
    coincidence_histogram,
    compute_metrics,
    count_coincidences,
    detect_peaks,
    estimate_background_level,
    exhaustive_window_search,
    histogram_pair,
    optimize_strategy_a,
    optimize_strategy_b,
    sift,
)
from .config import (
    ConfigError,
    default_config,
    load_config,
    packaged_config,
    write_config,
)
from .detection import (
    BackgroundCalibrationTable,
    BackgroundPipelineSpec,
    CalibrationRangeError,
    DetectorSpec,
    TcspcmSpec,
    cached_calibration,
    calibrate_background,
    dead_time_prune,
    detect,
    incident_background_rate,
    tcspcm_record,
)
from .protocol import (
    AliceConfig,
    AnalysisConfig,
    BobConfig,
    ChannelConfig,
    DetectorConfig,
    ExperimentConfig,
    RunConfig,
    RunOutput,
    SourceConfig,
    run_b92,
    run_b92_batch,
    source_operating_point,
)
from .rng import spawn, stream
from .spdc import (
    CrystalSpec,
    DispersionRangeError,
    NoPhaseMatchError,
    PumpSpec,
    SellmeierCoefficients,
    calibrate_coupling_constant,
    crystal_from_file,
    joint_amplitude,
    pair_generation_rate,
    phase_matching_temperature,
    phase_mismatch,
    refractive_index,
)
from .timetag import (
    InvalidRateError,
    SinglePhotonStatModel,
    ThermalStatModel,
    TimeTagSeries,
    apply_delay,
    generate_single_photon_tags,
    generate_thermal_background_tags,
    inter_arrival_histogram,
    merge,
    read_tags,
    resample_tags,
    write_tags,
)

__version__ = "0.1.0"
