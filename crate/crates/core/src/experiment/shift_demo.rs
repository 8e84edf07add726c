//! Inference through a pure shift `u(t + a) = f(t)`: a = 2 on `[0, 10]`
//! at 200 cells, 20 point readings evenly spaced over `[2, 8]`.

use std::path::Path;

use serde::Serialize;

use super::bundle::{csv_bytes, field_csv, fmt, observations_csv, BundleWriter};
use super::config::{
    BasisConfig, ExperimentConfig, GridConfig, KernelConfig, Lengthscale, McmcConfig, NoiseConfig, PredictiveConfig, Seeds, SensorConfig,
    SystemConfig, TruthConfig,
};
use super::data::{base_manifest, generate};
use super::infer::{fit, forcing_moments, score_predictive};
use crate::error::Result;
use crate::system::LinearSystem;

pub fn demo_config() -> ExperimentConfig {
    ExperimentConfig {
        system: SystemConfig::Shift { shift: 2.0, t_end: 10.0 },
        grid: GridConfig { cells: vec![200] },
        kernel: KernelConfig {
            lengthscale: Lengthscale::Isotropic(1.0),
            variance: 1.0,
        },
        basis: BasisConfig { features: 100 },
        truth: TruthConfig::default(),
        sensors: SensorConfig::Points { count: 20, lo: 2.0, hi: 8.0 },
        heldout: None,
        noise: NoiseConfig { sigma: 0.05 },
        seeds: Seeds::default(),
        predictive: PredictiveConfig::default(),
        mcmc: McmcConfig::default(),
        sweep: None,
        scan: None,
        output: None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShiftDemoReport {
    /// Mean squared error between the readings and the posterior mean of
    /// `u` at the observation points.
    pub mse: f64,
    /// Monte Carlo predictive MSE at the same points.
    pub predictive_mse: f64,
    pub observation_std: f64,
}

pub fn shift_demo(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ShiftDemoReport> {
    let data = generate(cfg)?;
    let f = fit(cfg, &data)?;
    let post = &f.output.posterior;
    let pred = f.output.phi.apply(post.mean().as_slice())?;
    let z = data.train.readings();
    let n = z.len() as f64;
    let mse = pred.iter().zip(z).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / n;
    let zm = z.iter().sum::<f64>() / n;
    let observation_std = (z.iter().map(|y| (y - zm).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let predictive_mse = score_predictive(cfg, &data, &f, &data.train)?.mse;
    let rep = ShiftDemoReport {
        mse,
        predictive_mse,
        observation_std,
    };
    if let Some(dir) = out {
        let (mean, var) = forcing_moments(&f)?;
        let u_mean = data.system.forward(&mean)?;
        let mut w = BundleWriter::create(dir)?;
        w.write("truth_forcing.csv", &field_csv(&data.truth)?)?;
        w.write("forcing_mean.csv", &field_csv(&mean)?)?;
        w.write("forcing_variance.csv", &field_csv(&var)?)?;
        w.write("solution_mean.csv", &field_csv(&u_mean)?)?;
        w.write("observations.csv", &observations_csv(&data.train_specs, z)?)?;
        w.write(
            "report.csv",
            &csv_bytes(
                &["metric", "value"],
                [
                    vec!["observation_mse".into(), fmt(mse)],
                    vec!["predictive_mse".into(), fmt(predictive_mse)],
                    vec!["observation_std".into(), fmt(observation_std)],
                ],
            )?,
        )?;
        let mut man = base_manifest(cfg, "shift-demo", &data.system);
        man.details.insert("observation_mse".into(), mse.into());
        w.finish(man)?;
    }
    Ok(rep)
}
