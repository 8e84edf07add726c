//! Inference over the forcing weights `q` from windowed observations.

pub mod linear;
pub mod observations;
pub mod pipeline;
pub mod predictive;
pub mod scan;

pub use linear::{
    assemble_phi, assemble_phi_from, cholesky_with_jitter, gram, misspecification, ml_estimate, ml_estimate_ridge, posterior_from_gram,
    posterior_q, Misspecification, MlEstimate, PhiMatrix, PosteriorQ, PosteriorRecord, Prior,
};
pub use observations::{add_noise, adjoint_bank, observe, synthesize, ObservationSet};
pub use pipeline::{run_pipeline, PipelineOutput, StageTimings};
pub use predictive::{
    band_coverage, nll_score, posterior_forcing, posterior_forcing_from, predictive_draws, predictive_mse, predictive_mse_from, predictive_nll,
    sample_posterior_forcing, ScoreBudget, CREDIBLE_Z, DEFAULT_PREDICTIVE_SAMPLES, SIGMA_FLOOR,
};
pub use scan::{grid_scan, lattice, ScanPoint};
