//! Sensor layouts: placement rules turned into observation windows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{SensorConfig, SystemConfig};
use crate::error::{Error, Result};
use crate::fields::{window_indicator, Field, Grid};

/// One observation window `[lo, hi)` in grid-axis order (`t` for 1-D
/// systems, `(t, y, x)` for the PDE).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WindowSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

fn time_windows(t_end: f64, count: usize, duration: Option<f64>) -> Result<Vec<(f64, f64)>> {
    let slot = t_end / count as f64;
    let d = duration.unwrap_or(slot);
    if !(d > 0.0) || d > t_end {
        return Err(Error::Config(format!("sensor duration {d} must lie in (0, {t_end}]")));
    }
    Ok((0..count)
        .map(|j| {
            let c = (j as f64 + 0.5) * slot;
            ((c - 0.5 * d).max(0.0), (c + 0.5 * d).min(t_end))
        })
        .collect())
}

fn spatial(centres: &[[f64; 2]], size: [f64; 2], times: &[(f64, f64)]) -> Vec<WindowSpec> {
    let mut out = Vec::with_capacity(centres.len() * times.len());
    for c in centres {
        for &(t0, t1) in times {
            out.push(WindowSpec {
                lo: vec![t0, c[1] - 0.5 * size[1], c[0] - 0.5 * size[0]],
                hi: vec![t1, c[1] + 0.5 * size[1], c[0] + 0.5 * size[0]],
            });
        }
    }
    out
}

/// `k × k` lattice centres `lower + (i + ½)(upper − lower)/k`.
pub fn lattice_centres(lower: [f64; 2], upper: [f64; 2], k: usize) -> Vec<[f64; 2]> {
    let step = [(upper[0] - lower[0]) / k as f64, (upper[1] - lower[1]) / k as f64];
    let mut out = Vec::with_capacity(k * k);
    for j in 0..k {
        for i in 0..k {
            out.push([lower[0] + (i as f64 + 0.5) * step[0], lower[1] + (j as f64 + 0.5) * step[1]]);
        }
    }
    out
}

/// Window specifications for a placement rule. `seed` drives random
/// placement only.
pub fn window_specs(sensors: &SensorConfig, system: &SystemConfig, seed: u64) -> Result<Vec<WindowSpec>> {
    let t_end = system.t_end();
    match (sensors, system) {
        (SensorConfig::Intervals { count, lo, hi }, _) if system.ndim() == 1 => {
            let (a, b) = (lo.unwrap_or(0.0), hi.unwrap_or(t_end));
            if !(a < b) {
                return Err(Error::Config("[sensors] intervals need lo < hi".into()));
            }
            let w = (b - a) / *count as f64;
            Ok((0..*count)
                .map(|i| WindowSpec {
                    lo: vec![a + i as f64 * w],
                    hi: vec![a + (i + 1) as f64 * w],
                })
                .collect())
        }
        (SensorConfig::Points { count, lo, hi }, _) if system.ndim() == 1 => {
            let eps = 1e-9 * t_end;
            Ok((0..*count)
                .map(|i| {
                    let t = if *count == 1 { *lo } else { lo + (hi - lo) * i as f64 / (*count - 1) as f64 };
                    let t = t.clamp(eps, t_end - eps);
                    WindowSpec {
                        lo: vec![t - eps],
                        hi: vec![t + eps],
                    }
                })
                .collect())
        }
        (SensorConfig::List { points, .. }, _) if system.ndim() == 1 => Ok(points
            .iter()
            .map(|p| WindowSpec {
                lo: vec![p[0]],
                hi: vec![p[1]],
            })
            .collect()),
        (
            SensorConfig::Grid {
                k,
                size,
                time_windows: tw,
                duration,
            },
            SystemConfig::Pde { lower, upper, .. },
        ) => Ok(spatial(&lattice_centres(*lower, *upper, *k), *size, &time_windows(t_end, *tw, *duration)?)),
        (
            SensorConfig::Random {
                count,
                size,
                time_windows: tw,
                duration,
            },
            SystemConfig::Pde { lower, upper, .. },
        ) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(0x5e75);
            let centres: Vec<[f64; 2]> = (0..*count)
                .map(|_| {
                    let mut c = [0.0; 2];
                    for a in 0..2 {
                        let lo = lower[a] + 0.5 * size[a];
                        let hi = (upper[a] - 0.5 * size[a]).max(lo);
                        c[a] = lo + (hi - lo) * rng.random::<f64>();
                    }
                    c
                })
                .collect();
            Ok(spatial(&centres, *size, &time_windows(t_end, *tw, *duration)?))
        }
        (
            SensorConfig::List {
                points,
                size,
                time_windows: tw,
                duration,
            },
            SystemConfig::Pde { .. },
        ) => {
            let centres: Vec<[f64; 2]> = points.iter().map(|p| [p[0], p[1]]).collect();
            let size = size.ok_or_else(|| Error::Config("[sensors] list on the PDE needs a size".into()))?;
            Ok(spatial(&centres, size, &time_windows(t_end, tw.unwrap_or(1), *duration)?))
        }
        _ => Err(Error::Config(format!(
            "sensor placement '{}' does not fit a {} system",
            sensors.rule(),
            system.kind()
        ))),
    }
}

/// Observation fields for `specs`, in order.
pub fn build_windows(specs: &[WindowSpec], grid: &Grid<f64>) -> Result<Vec<Field<f64>>> {
    specs
        .par_iter()
        .enumerate()
        .map(|(i, s)| window_indicator(grid, &s.lo, &s.hi).map_err(|e| e.context(format!("sensor window {i}"))))
        .collect()
}
