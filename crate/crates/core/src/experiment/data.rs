//! Synthetic data: a ground-truth forcing, its forward solution, and noisy
//! sensor readings for training and held-out windows.

use std::collections::BTreeMap;
use std::path::Path;

use super::bundle::{field_csv, observations_csv, read_field_csv, read_observations, BundleWriter, Manifest};
use super::config::{ExperimentConfig, SystemHandle};
use super::sensors::{build_windows, window_specs, WindowSpec};
use crate::error::{Error, Result};
use crate::features::{sample_basis, sample_prior_forcing};
use crate::fields::Field;
use crate::inference::{observe, synthesize, ObservationSet, SIGMA_FLOOR};
use crate::system::LinearSystem;

// Offsets separating the streams derived from one configured seed.
const TRUTH_WEIGHTS: u64 = 0x7275_7468;
const HELDOUT_LAYOUT: u64 = 0x6865_6c64;

pub struct Dataset {
    pub system: SystemHandle,
    pub truth: Field<f64>,
    /// `None` when loaded from a bundle without re-solving.
    pub solution: Option<Field<f64>>,
    pub train_specs: Vec<WindowSpec>,
    pub train: ObservationSet<f64>,
    pub heldout_specs: Vec<WindowSpec>,
    pub heldout: Option<ObservationSet<f64>>,
}

impl Dataset {
    /// Windows and readings scored by predictive checks: the held-out set
    /// when there is one, otherwise the training set.
    pub fn scoring_set(&self) -> &ObservationSet<f64> {
        self.heldout.as_ref().unwrap_or(&self.train)
    }
}

/// Ground-truth forcing drawn from a `truth.features` basis seeded by
/// `seeds.data`.
pub fn ground_truth(cfg: &ExperimentConfig, system: &SystemHandle) -> Result<Field<f64>> {
    let grid = system.grid();
    let basis = sample_basis(cfg.truth.features, grid.ndim(), cfg.truth_kernel()?, cfg.seeds.data)?;
    let (_, f) = sample_prior_forcing(&basis, grid, cfg.seeds.data.wrapping_add(TRUTH_WEIGHTS))?;
    Ok(f)
}

/// Build the whole dataset in memory. Deterministic in the configuration.
pub fn generate(cfg: &ExperimentConfig) -> Result<Dataset> {
    let system = cfg.build_system()?;
    let truth = ground_truth(cfg, &system).map_err(|e| e.context("ground truth"))?;
    let train_specs = window_specs(&cfg.sensors, &cfg.system, cfg.seeds.data)?;
    let windows = build_windows(&train_specs, system.grid()).map_err(|e| e.context("[sensors]"))?;
    let sigma = cfg.noise.sigma;
    let (train, u) = synthesize(&system, windows, &truth, sigma, cfg.seeds.noise).map_err(|e| e.context("forward solve"))?;
    let (heldout_specs, heldout) = match &cfg.heldout {
        Some(h) => {
            let specs = window_specs(h, &cfg.system, cfg.seeds.data.wrapping_add(HELDOUT_LAYOUT))?;
            let windows = build_windows(&specs, system.grid()).map_err(|e| e.context("[heldout]"))?;
            let clean = observe(&windows, &u)?;
            let z = if sigma > 0.0 {
                crate::inference::add_noise(&clean, sigma, cfg.seeds.noise.wrapping_add(HELDOUT_LAYOUT))
            } else {
                clean
            };
            (specs, Some(ObservationSet::new(windows, z, sigma.max(SIGMA_FLOOR))?))
        }
        None => (Vec::new(), None),
    };
    Ok(Dataset {
        system,
        truth,
        solution: Some(u),
        train_specs,
        train,
        heldout_specs,
        heldout,
    })
}

pub(crate) fn base_manifest(cfg: &ExperimentConfig, command: &str, system: &SystemHandle) -> Manifest {
    Manifest {
        command: command.into(),
        config_hash: cfg.hash(),
        system: cfg.system.kind().into(),
        solver: system.name().into(),
        grid: cfg.grid.cells.clone(),
        seeds: cfg.seeds,
        sensor_rule: cfg.sensors.rule(),
        heldout_rule: cfg.heldout.as_ref().map(|h| h.rule()),
        details: BTreeMap::new(),
        files: BTreeMap::new(),
    }
}

/// Generate and write a data bundle: `config.toml`, `truth_forcing.csv`,
/// `solution.csv`, `observations.csv`, optional `heldout.csv`, manifest.
pub fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<(Dataset, Manifest)> {
    let data = generate(cfg)?;
    let mut w = BundleWriter::create(out)?;
    w.write("config.toml", cfg.to_toml_string()?.as_bytes())?;
    w.write("truth_forcing.csv", &field_csv(&data.truth)?)?;
    if let Some(u) = &data.solution {
        w.write("solution.csv", &field_csv(u)?)?;
    }
    w.write("observations.csv", &observations_csv(&data.train_specs, data.train.readings())?)?;
    if let Some(h) = &data.heldout {
        w.write("heldout.csv", &observations_csv(&data.heldout_specs, h.readings())?)?;
    }
    let mut m = base_manifest(cfg, "simulate", &data.system);
    m.details.insert("observations".into(), data.train.len().into());
    m.details.insert("heldout".into(), data.heldout.as_ref().map_or(0, |h| h.len()).into());
    m.details.insert("noise_sigma".into(), cfg.noise.sigma.into());
    let m = w.finish(m)?;
    Ok((data, m))
}

/// Read a bundle written by [`simulate`]. The bundle must match the
/// configuration's system and grid; a different configuration hash only
/// warns, so inference settings can change without resimulating.
pub fn load_bundle(cfg: &ExperimentConfig, dir: &Path) -> Result<Dataset> {
    let m = Manifest::read(dir)?;
    m.verify(dir)?;
    if m.system != cfg.system.kind() || m.grid != cfg.grid.cells {
        return Err(Error::Config(format!(
            "bundle {} holds a {} system on grid {:?}, the config asks for {} on {:?}",
            dir.display(),
            m.system,
            m.grid,
            cfg.system.kind(),
            cfg.grid.cells
        )));
    }
    if m.config_hash != cfg.hash() {
        log::warn!("bundle {} was simulated from a different configuration", dir.display());
    }
    let system = cfg.build_system()?;
    let grid = system.grid().clone();
    let truth = read_field_csv(&dir.join("truth_forcing.csv"), &grid)?;
    let sigma = cfg.noise.sigma.max(SIGMA_FLOOR);
    let load = |name: &str| -> Result<(Vec<WindowSpec>, ObservationSet<f64>)> {
        let (specs, z) = read_observations(&dir.join(name))?;
        let windows = build_windows(&specs, &grid)?;
        Ok((specs, ObservationSet::new(windows, z, sigma)?))
    };
    let (train_specs, train) = load("observations.csv")?;
    let (heldout_specs, heldout) = if m.files.contains_key("heldout.csv") {
        let (s, h) = load("heldout.csv")?;
        (s, Some(h))
    } else {
        (Vec::new(), None)
    };
    Ok(Dataset {
        system,
        truth,
        solution: None,
        train_specs,
        train,
        heldout_specs,
        heldout,
    })
}
