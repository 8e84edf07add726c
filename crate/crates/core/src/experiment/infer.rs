//! Fit the posterior over `q` with the adjoint pipeline and export it.

use std::path::Path;

use serde::Serialize;

use super::bundle::{csv_bytes, field_csv, fmt, BundleWriter, Manifest};
use super::config::ExperimentConfig;
use super::data::{base_manifest, Dataset};
use crate::error::{Error, Result};
use crate::features::{sample_basis, FeatureBasis};
use crate::fields::Field;
use crate::inference::{
    band_coverage, posterior_forcing_from, predictive_draws, predictive_nll, run_pipeline, ObservationSet, PipelineOutput, Prior, CREDIBLE_Z,
};
use crate::system::LinearSystem;

pub struct Fit {
    pub basis: FeatureBasis<f64>,
    pub output: PipelineOutput<f64>,
}

/// Sample the inference basis and run the five-stage pipeline on the
/// training data.
pub fn fit(cfg: &ExperimentConfig, data: &Dataset) -> Result<Fit> {
    let grid = data.system.grid();
    let basis = sample_basis(cfg.basis.features, grid.ndim(), cfg.kernel.params()?, cfg.seeds.basis)?;
    let output = run_pipeline(&data.system, &data.train, &basis, &Prior::standard(basis.len()))?;
    Ok(Fit { basis, output })
}

/// Monte Carlo predictive scores from one set of posterior draws.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PredictiveScore {
    pub mse: f64,
    pub nll: f64,
    pub samples: usize,
}

pub fn score_predictive(cfg: &ExperimentConfig, data: &Dataset, fit: &Fit, on: &ObservationSet<f64>) -> Result<PredictiveScore> {
    let samples = cfg.predictive.samples;
    let draws = predictive_draws(
        &fit.output.posterior,
        &fit.output.basis_matrix,
        &data.system,
        on.windows(),
        samples,
        cfg.seeds.predictive,
    )?;
    let z = on.readings();
    let se: f64 = draws.iter().flat_map(|d| d.iter().zip(z).map(|(p, y)| (p - y).powi(2))).sum();
    Ok(PredictiveScore {
        mse: se / (samples * z.len()) as f64,
        nll: predictive_nll(&draws, z, on.sigma())?,
        samples,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InferReport {
    pub observations: usize,
    pub features: usize,
    pub scored_on: &'static str,
    pub scored_windows: usize,
    pub predictive: PredictiveScore,
    /// Root mean square of posterior mean minus true forcing over the grid.
    pub forcing_rmse: f64,
    /// Share of cells whose true forcing lies in the pointwise 95% band.
    pub band_coverage: f64,
    pub misspecification: Option<String>,
    /// Stage name and wall-clock seconds, in pipeline order.
    pub timings: Vec<(String, f64)>,
}

/// Posterior mean and pointwise variance of the forcing.
pub fn forcing_moments(fit: &Fit) -> Result<(Field<f64>, Field<f64>)> {
    posterior_forcing_from(&fit.output.posterior, &fit.output.basis_matrix)
}

fn report(cfg: &ExperimentConfig, data: &Dataset, fit: &Fit, mean: &Field<f64>, var: &Field<f64>) -> Result<InferReport> {
    let on = data.scoring_set();
    let predictive = score_predictive(cfg, data, fit, on)?;
    let n = mean.values().len() as f64;
    let sq: f64 = mean.values().iter().zip(data.truth.values()).map(|(m, t)| (m - t).powi(2)).sum();
    Ok(InferReport {
        observations: data.train.len(),
        features: fit.basis.len(),
        scored_on: if data.heldout.is_some() { "heldout" } else { "training" },
        scored_windows: on.len(),
        predictive,
        forcing_rmse: (sq / n).sqrt(),
        band_coverage: band_coverage(mean, var, &data.truth, CREDIBLE_Z)?,
        misspecification: fit.output.misspecification.as_ref().map(|m| m.to_string()),
        timings: fit
            .output
            .timings
            .stages()
            .iter()
            .map(|(s, d)| (s.to_string(), d.as_secs_f64()))
            .collect(),
    })
}

/// Fit, score, and (with `out`) write the posterior bundle. `slice` picks
/// the time for spatial forcing exports of space-time systems.
pub fn infer(cfg: &ExperimentConfig, data: &Dataset, out: Option<&Path>, slice: Option<f64>) -> Result<(Fit, InferReport)> {
    if slice.is_some() && data.system.grid().ndim() < 2 {
        return Err(Error::Config("--slice needs a space-time system".into()));
    }
    let fit = fit(cfg, data)?;
    let (mean, var) = forcing_moments(&fit)?;
    let rep = report(cfg, data, &fit, &mean, &var)?;
    if let Some(dir) = out {
        write_bundle(cfg, data, &fit, &rep, (&mean, &var), dir, slice)?;
    }
    Ok((fit, rep))
}

fn write_bundle(
    cfg: &ExperimentConfig,
    data: &Dataset,
    fit: &Fit,
    rep: &InferReport,
    (mean, var): (&Field<f64>, &Field<f64>),
    dir: &Path,
    slice: Option<f64>,
) -> Result<Manifest> {
    let mut w = BundleWriter::create(dir)?;
    let hash = cfg.hash();
    let record = fit.output.posterior.to_record(fit.basis.seed(), &hash);
    w.write("posterior.json", serde_json::to_string_pretty(&record)?.as_bytes())?;
    w.write("basis.json", serde_json::to_string_pretty(&fit.basis.to_spec(false))?.as_bytes())?;
    let (m, v) = match slice {
        Some(t) => (mean.time_slice(t)?, var.time_slice(t)?),
        None => (mean.clone(), var.clone()),
    };
    w.write("forcing_mean.csv", &field_csv(&m)?)?;
    w.write("forcing_variance.csv", &field_csv(&v)?)?;
    w.write_with("phi.csv", |b| fit.output.phi.write_csv(b))?;
    w.write(
        "timings.csv",
        &csv_bytes(&["stage", "seconds"], rep.timings.iter().map(|(s, t)| vec![s.clone(), fmt(*t)]))?,
    )?;
    let p = &rep.predictive;
    w.write(
        "predictive.csv",
        &csv_bytes(
            &["metric", "value"],
            [
                ("predictive_mse", fmt(p.mse)),
                ("predictive_nll", fmt(p.nll)),
                ("samples", p.samples.to_string()),
                ("scored_windows", rep.scored_windows.to_string()),
                ("forcing_rmse", fmt(rep.forcing_rmse)),
                ("band_coverage", fmt(rep.band_coverage)),
            ]
            .into_iter()
            .map(|(k, v)| vec![k.to_string(), v]),
        )?,
    )?;
    let mut man = base_manifest(cfg, "infer", &data.system);
    man.details.insert("features".into(), rep.features.into());
    man.details.insert("observations".into(), rep.observations.into());
    man.details.insert("scored_on".into(), rep.scored_on.into());
    man.details.insert("jitter".into(), record.jitter.into());
    if let Some(t) = slice {
        man.details.insert("slice_t".into(), t.into());
    }
    if let Some(msg) = &rep.misspecification {
        man.details.insert("misspecification".into(), msg.clone().into());
    }
    man.details.insert("nondeterministic_files".into(), vec!["timings.csv"].into());
    w.finish(man)
}
