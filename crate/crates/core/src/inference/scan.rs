//! Exhaustive lattice scan over hyperparameters.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanPoint {
    pub theta: Vec<f64>,
    pub nll: f64,
}

/// Evenly spaced values per axis; a single step yields the lower bound.
pub fn lattice(bounds: &[(f64, f64)], steps: &[usize]) -> Result<Vec<Vec<f64>>> {
    if bounds.len() != steps.len() {
        return Err(Error::DimensionMismatch {
            expected: bounds.len(),
            got: steps.len(),
        });
    }
    bounds
        .iter()
        .zip(steps)
        .map(|(&(lo, hi), &k)| {
            if k == 0 || !(lo <= hi) {
                return Err(Error::Config(format!("bad scan axis [{lo}, {hi}] with {k} steps")));
            }
            Ok(if k == 1 {
                vec![lo]
            } else {
                (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect()
            })
        })
        .collect()
}

fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect()
    })
}

/// Score every lattice point and sort ascending by NLL, ties broken by
/// lexicographic theta. Failures carry the offending theta.
pub fn grid_scan<F>(axes: &[Vec<f64>], score: F) -> Result<Vec<ScanPoint>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let points = cartesian(axes);
    let mut out: Vec<ScanPoint> = points
        .into_par_iter()
        .map(|theta| {
            let nll = score(&theta).map_err(|e| e.context(format!("scoring theta = {theta:?}")))?;
            Ok(ScanPoint { theta, nll })
        })
        .collect::<Result<_>>()?;
    out.sort_by(|a, b| {
        a.nll
            .total_cmp(&b.nll)
            .then_with(|| a.theta.iter().zip(&b.theta).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal))
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_lattice() {
        let axes = lattice(&[(2.0, 5.0)], &[1]).unwrap();
        let r = grid_scan(&axes, |t| Ok(t[0])).unwrap();
        assert_eq!(r, vec![ScanPoint { theta: vec![2.0], nll: 2.0 }]);
    }

    #[test]
    fn sorted_with_lexicographic_ties() {
        let axes = lattice(&[(0.0, 1.0), (0.0, 2.0)], &[2, 3]).unwrap();
        assert_eq!(axes[1], vec![0.0, 1.0, 2.0]);
        let r = grid_scan(&axes, |t| Ok((t[1] - 1.0).abs())).unwrap();
        assert_eq!(r.len(), 6);
        assert_eq!(r[0].theta, vec![0.0, 1.0]);
        assert_eq!(r[1].theta, vec![1.0, 1.0]);
        assert!(r.windows(2).all(|w| w[0].nll <= w[1].nll));
        assert_eq!(r, grid_scan(&axes, |t| Ok((t[1] - 1.0).abs())).unwrap());
    }

    #[test]
    fn errors_name_the_point() {
        let axes = lattice(&[(0.0, 1.0)], &[2]).unwrap();
        let err = grid_scan(&axes, |t| if t[0] > 0.5 { Err(Error::Domain("x".into())) } else { Ok(0.0) }).unwrap_err();
        assert!(err.to_string().contains("theta"));
    }
}
