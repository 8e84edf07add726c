//! Experiment harness: configuration, synthetic data, and the commands
//! behind the `adjgp` binary. Every artifact is a pure function of the
//! configuration and its seeds, apart from wall-clock timing files.

pub mod bundle;
pub mod config;
pub mod data;
pub mod infer;
pub mod sampler;
pub mod scan;
pub mod sensors;
pub mod shift_demo;
pub mod sweep;

pub use bundle::{sha256_hex, BundleWriter, Manifest};
pub use config::{
    build_system, with_parameter, BasisConfig, ExperimentConfig, GridConfig, KernelConfig, Lengthscale, McmcConfig, McmcTarget, NoiseConfig,
    PredictiveConfig, ScanAxis, ScanConfig, Seeds, SensorConfig, SweepConfig, SystemConfig, SystemHandle, TruthConfig,
};
pub use data::{generate, ground_truth, load_bundle, simulate, Dataset};
pub use infer::{fit, forcing_moments, infer, score_predictive, Fit, InferReport, PredictiveScore};
pub use sampler::{budget_warning, mcmc, run_mcmc, ComparisonRow, McmcOutcome, MH_FEATURE_LIMIT};
pub use scan::{scan_hyper, scan_to, score_point};
pub use sensors::{build_windows, lattice_centres, window_specs, WindowSpec};
pub use shift_demo::{demo_config, shift_demo, ShiftDemoReport};
pub use sweep::{cell_config, summarize, sweep, with_sensor_count, SummaryRow, SweepRow};
