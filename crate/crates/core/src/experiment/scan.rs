//! Lattice scan of kernel and system parameters by predictive NLL.

use std::path::Path;

use super::bundle::{csv_bytes, fmt, BundleWriter};
use super::config::{build_system, with_parameter, ExperimentConfig};
use super::data::{base_manifest, Dataset};
use crate::error::{Error, Result};
use crate::features::KernelParams;
use crate::inference::{grid_scan, lattice, nll_score, ScanPoint, ScoreBudget};

/// Score one point `theta` (one value per `[scan]` axis, in order).
pub fn score_point(cfg: &ExperimentConfig, data: &Dataset, theta: &[f64]) -> Result<f64> {
    let scan = cfg.scan.as_ref().ok_or_else(|| Error::Config("scan-hyper needs a [scan] section".into()))?;
    let base = cfg.kernel.params()?;
    let (mut l, mut v) = (base.lengthscale, base.variance);
    let mut sys = cfg.system.clone();
    for (axis, &x) in scan.axes.iter().zip(theta) {
        match axis.name.as_str() {
            "lengthscale" => l = x,
            "variance" => v = x,
            name => sys = with_parameter(&sys, name, x)?,
        }
    }
    let kernel = KernelParams::new(l, v)?;
    let system = build_system(&sys, &cfg.grid.cells)?;
    let budget = ScoreBudget {
        features: scan.features.unwrap_or(cfg.basis.features),
        samples: scan.samples.unwrap_or(cfg.predictive.samples),
        basis_seed: cfg.seeds.basis,
        seed: cfg.seeds.predictive,
    };
    nll_score(&system, kernel, &data.train, &budget)
}

/// Score the whole lattice. Points whose parameters the solver rejects
/// (for instance a stability violation) score `+∞` rather than aborting.
pub fn scan_hyper(cfg: &ExperimentConfig, data: &Dataset) -> Result<Vec<ScanPoint>> {
    let scan = cfg.scan.as_ref().ok_or_else(|| Error::Config("scan-hyper needs a [scan] section".into()))?;
    let bounds: Vec<(f64, f64)> = scan.axes.iter().map(|a| (a.lo, a.hi)).collect();
    let steps: Vec<usize> = scan.axes.iter().map(|a| a.steps).collect();
    let axes = lattice(&bounds, &steps)?;
    grid_scan(&axes, |theta| match score_point(cfg, data, theta) {
        Ok(v) => Ok(v),
        Err(e) if e.exit_code() == 2 => {
            log::warn!("theta {theta:?} rejected: {e}");
            Ok(f64::INFINITY)
        }
        Err(e) => Err(e),
    })
}

/// [`scan_hyper`] plus `scan.csv` (rank, one column per axis, nll) and a
/// manifest.
pub fn scan_to(cfg: &ExperimentConfig, data: &Dataset, out: &Path) -> Result<Vec<ScanPoint>> {
    let points = scan_hyper(cfg, data)?;
    let scan = cfg.scan.as_ref().expect("checked by scan_hyper");
    let mut header = vec!["rank".to_string()];
    header.extend(scan.axes.iter().map(|a| a.name.clone()));
    header.push("nll".into());
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut w = BundleWriter::create(out)?;
    w.write(
        "scan.csv",
        &csv_bytes(
            &h,
            points.iter().enumerate().map(|(i, p)| {
                let mut row = vec![i.to_string()];
                row.extend(p.theta.iter().map(|&x| fmt(x)));
                row.push(fmt(p.nll));
                row
            }),
        )?,
    )?;
    let mut man = base_manifest(cfg, "scan-hyper", &data.system);
    man.details.insert("points".into(), points.len().into());
    if let Some(best) = points.first() {
        man.details.insert("best_theta".into(), best.theta.clone().into());
    }
    w.finish(man)?;
    Ok(points)
}
