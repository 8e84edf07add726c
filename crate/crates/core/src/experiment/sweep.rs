//! Cartesian sweep over sensor and feature counts with replicates. Results
//! are appended as each group finishes, so an interrupted sweep resumes
//! where it stopped.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::bundle::{csv_bytes, fmt, BundleWriter, Manifest};
use super::config::{ExperimentConfig, SensorConfig, Seeds};
use super::data::{base_manifest, generate};
use super::infer::{fit, score_predictive};
use crate::error::{Error, Result};

pub const RESULTS: &str = "results.csv";
pub const SUMMARY: &str = "summary.csv";
const SWEEP_STATE: &str = "sweep.json";

/// Seed spacing between replicates. Replicate 0 uses the configured seeds.
const REPLICATE_STRIDE: u64 = 1_000_003;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub replicate: usize,
    pub sensors: usize,
    pub features: usize,
    pub mse: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub sensors: usize,
    pub features: usize,
    pub replicates: usize,
    pub median: f64,
    pub lo95: f64,
    pub hi95: f64,
}

pub fn replicate_seeds(seeds: &Seeds, r: usize) -> Seeds {
    let off = REPLICATE_STRIDE.wrapping_mul(r as u64);
    Seeds {
        data: seeds.data.wrapping_add(off),
        basis: seeds.basis.wrapping_add(off),
        noise: seeds.noise.wrapping_add(off),
        mcmc: seeds.mcmc.wrapping_add(off),
        predictive: seeds.predictive.wrapping_add(off),
    }
}

/// The sensor rule with `count` sensors in total.
pub fn with_sensor_count(s: &SensorConfig, count: usize) -> Result<SensorConfig> {
    let mut s = s.clone();
    match &mut s {
        SensorConfig::Grid { k, .. } => {
            let r = (count as f64).sqrt().round() as usize;
            if r * r != count {
                return Err(Error::Config(format!("grid placement needs a square sensor count, got {count}")));
            }
            *k = r;
        }
        SensorConfig::Random { count: c, .. } | SensorConfig::Intervals { count: c, .. } | SensorConfig::Points { count: c, .. } => *c = count,
        SensorConfig::List { .. } => return Err(Error::Config("a sweep cannot vary the size of an explicit sensor list".into())),
    }
    Ok(s)
}

/// The configuration of one sweep cell.
pub fn cell_config(cfg: &ExperimentConfig, sensors: usize, features: usize, replicate: usize) -> Result<ExperimentConfig> {
    let mut c = cfg.clone();
    c.sensors = with_sensor_count(&cfg.sensors, sensors)?;
    c.basis.features = features;
    c.seeds = replicate_seeds(&cfg.seeds, replicate);
    c.sweep = None;
    Ok(c)
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = p * (sorted.len() - 1) as f64;
    let (i, frac) = (h.floor() as usize, h - h.floor());
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + frac * (sorted[j] - sorted[i])
}

pub fn summarize(rows: &[SweepRow]) -> Vec<SummaryRow> {
    let cells: BTreeSet<(usize, usize)> = rows.iter().map(|r| (r.sensors, r.features)).collect();
    cells
        .into_iter()
        .map(|(s, m)| {
            let mut v: Vec<f64> = rows.iter().filter(|r| r.sensors == s && r.features == m).map(|r| r.mse).collect();
            v.sort_by(f64::total_cmp);
            SummaryRow {
                sensors: s,
                features: m,
                replicates: v.len(),
                median: quantile(&v, 0.5),
                lo95: quantile(&v, 0.025),
                hi95: quantile(&v, 0.975),
            }
        })
        .collect()
}

fn read_rows(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            let bad = || Error::Serde(format!("{}: malformed row", path.display()));
            let get = |i: usize| rec.get(i).ok_or_else(bad);
            Ok(SweepRow {
                replicate: get(0)?.parse().map_err(|_| bad())?,
                sensors: get(1)?.parse().map_err(|_| bad())?,
                features: get(2)?.parse().map_err(|_| bad())?,
                mse: get(3)?.parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

fn row_line(r: &SweepRow) -> String {
    format!("{},{},{},{}\n", r.replicate, r.sensors, r.features, fmt(r.mse))
}

/// Held-out predictive MSE for every feature count on one (replicate,
/// sensors) dataset. The dataset is generated once per group.
pub fn run_group(cfg: &ExperimentConfig, replicate: usize, sensors: usize, features: &[usize]) -> Result<Vec<SweepRow>> {
    let base = cell_config(cfg, sensors, features[0], replicate)?;
    let data = generate(&base).map_err(|e| e.context(format!("replicate {replicate}, {sensors} sensors")))?;
    features
        .iter()
        .map(|&m| {
            let c = cell_config(cfg, sensors, m, replicate)?;
            let f = fit(&c, &data)?;
            let s = score_predictive(&c, &data, &f, data.scoring_set())?;
            Ok(SweepRow {
                replicate,
                sensors,
                features: m,
                mse: s.mse,
            })
        })
        .collect::<Result<_>>()
        .map_err(|e: Error| e.context(format!("replicate {replicate}, {sensors} sensors")))
}

/// Run (or resume) the sweep in `out`. Rows are appended in a fixed cell
/// order, so the results file does not depend on thread count or on where
/// a previous run stopped.
pub fn sweep(cfg: &ExperimentConfig, out: &Path) -> Result<(Vec<SweepRow>, Vec<SummaryRow>)> {
    let spec = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("sweep needs a [sweep] section".into()))?;
    fs::create_dir_all(out)?;
    let hash = cfg.hash();
    let state = out.join(SWEEP_STATE);
    let results = out.join(RESULTS);
    if state.exists() {
        let prev: serde_json::Value = serde_json::from_str(&fs::read_to_string(&state)?)?;
        if prev.get("config_hash").and_then(|v| v.as_str()) != Some(hash.as_str()) {
            return Err(Error::Config(format!(
                "{} holds a sweep for a different configuration; use a fresh output directory",
                out.display()
            )));
        }
    } else {
        fs::write(&state, serde_json::to_string_pretty(&serde_json::json!({ "config_hash": hash }))? + "\n")?;
    }
    let mut rows = if results.exists() { read_rows(&results)? } else { Vec::new() };
    if !results.exists() {
        fs::write(&results, "replicate,sensors,features,mse\n")?;
    }
    let done: BTreeSet<(usize, usize, usize)> = rows.iter().map(|r| (r.replicate, r.sensors, r.features)).collect();
    if !done.is_empty() {
        log::info!("resuming sweep with {} finished cells", done.len());
    }
    for r in 0..spec.replicates {
        for &s in &spec.sensors {
            let todo: Vec<usize> = spec.features.iter().copied().filter(|&m| !done.contains(&(r, s, m))).collect();
            if todo.is_empty() {
                continue;
            }
            let new = run_group(cfg, r, s, &todo)?;
            let mut f = fs::OpenOptions::new().append(true).open(&results)?;
            for row in &new {
                log::info!("replicate {} sensors {} features {}: mse {:.4}", row.replicate, row.sensors, row.features, row.mse);
                f.write_all(row_line(row).as_bytes())?;
            }
            rows.extend(new);
        }
    }
    rows.sort_by_key(|r| {
        let order = |v: &[usize], x: usize| v.iter().position(|&y| y == x).unwrap_or(usize::MAX);
        (r.replicate, order(&spec.sensors, r.sensors), order(&spec.features, r.features))
    });
    let summary = summarize(&rows);
    let mut w = BundleWriter::create(out)?;
    // rewritten in canonical order so a resumed sweep matches a fresh one
    w.write(
        RESULTS,
        &csv_bytes(
            &["replicate", "sensors", "features", "mse"],
            rows.iter()
                .map(|r| vec![r.replicate.to_string(), r.sensors.to_string(), r.features.to_string(), fmt(r.mse)]),
        )?,
    )?;
    w.write(
        SUMMARY,
        &csv_bytes(
            &["sensors", "features", "replicates", "median_mse", "lo95", "hi95"],
            summary.iter().map(|s| {
                vec![
                    s.sensors.to_string(),
                    s.features.to_string(),
                    s.replicates.to_string(),
                    fmt(s.median),
                    fmt(s.lo95),
                    fmt(s.hi95),
                ]
            }),
        )?,
    )?;
    w.track(SWEEP_STATE)?;
    let system = cfg.build_system()?;
    let mut man: Manifest = base_manifest(cfg, "sweep", &system);
    man.details.insert("cells".into(), rows.len().into());
    w.finish(man)?;
    Ok((rows, summary))
}
