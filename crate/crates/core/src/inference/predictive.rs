//! Posterior forcing moments, posterior samples pushed through the forward
//! solver, and the predictive scores built on them.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::linear::{assemble_phi_from, posterior_q, PosteriorQ, Prior};
use super::observations::{adjoint_bank, observe, ObservationSet};
use crate::error::{Error, Result};
use crate::features::{eval_basis, sample_basis, BasisMatrix, FeatureBasis, KernelParams};
use crate::fields::{Field, Grid};
use crate::scalar::Real;
use crate::system::LinearSystem;

/// Posterior samples used by predictive scores unless stated otherwise.
pub const DEFAULT_PREDICTIVE_SAMPLES: usize = 100;

/// Smallest predictive standard deviation admitted by the NLL.
pub const SIGMA_FLOOR: f64 = 1e-6;

const CHUNK: usize = 2048;

fn check<T: Real>(post: &PosteriorQ<T>, bm: &BasisMatrix<T>) -> Result<()> {
    if post.len() != bm.n_features() {
        return Err(Error::DimensionMismatch {
            expected: bm.n_features(),
            got: post.len(),
        });
    }
    Ok(())
}

/// Mean and pointwise variance `φ(x)ᵀΣₙφ(x)` of the posterior forcing.
pub fn posterior_forcing<T: Real>(post: &PosteriorQ<T>, basis: &FeatureBasis<T>, grid: &Grid<T>) -> Result<(Field<T>, Field<T>)> {
    posterior_forcing_from(post, &eval_basis(basis, grid)?)
}

pub fn posterior_forcing_from<T: Real>(post: &PosteriorQ<T>, bm: &BasisMatrix<T>) -> Result<(Field<T>, Field<T>)> {
    check(post, bm)?;
    let mean = bm.combine(post.mean().as_slice())?;
    let g = bm.grid().len();
    let m = bm.n_features();
    let rt = post.factor().transpose();
    let chunks: Vec<usize> = (0..g).step_by(CHUNK).collect();
    let parts: Vec<Vec<T>> = chunks
        .par_iter()
        .map(|&c0| {
            let k = CHUNK.min(g - c0);
            let b = DMatrix::from_fn(m, k, |row, j| bm.row(row)[c0 + j]);
            let w = &rt * b;
            (0..k).map(|j| w.column(j).norm_squared()).collect()
        })
        .collect();
    let var = Field::new(bm.grid().clone(), parts.concat())?;
    Ok((mean, var))
}

/// `count` posterior forcing draws, deterministic per seed.
pub fn sample_posterior_forcing<T: Real>(
    post: &PosteriorQ<T>,
    basis: &FeatureBasis<T>,
    grid: &Grid<T>,
    count: usize,
    seed: u64,
) -> Result<Vec<Field<T>>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let bm = eval_basis(basis, grid)?;
    check(post, &bm)?;
    post.sample_q(count, seed)
        .iter()
        .map(|q| bm.combine(q.as_slice()))
        .collect()
}

/// Readings predicted by each of `samples` posterior draws: draw `q`, form
/// the forcing, solve forward, and apply `windows`. Returns `samples × n`.
pub fn predictive_draws<T: Real, S: LinearSystem<T> + ?Sized>(
    post: &PosteriorQ<T>,
    bm: &BasisMatrix<T>,
    system: &S,
    windows: &[Field<T>],
    samples: usize,
    seed: u64,
) -> Result<Vec<Vec<T>>> {
    check(post, bm)?;
    let qs = post.sample_q(samples, seed);
    qs.par_iter()
        .map(|q| {
            let f = bm.combine(q.as_slice())?;
            let u = system.forward(&f)?;
            observe(windows, &u)
        })
        .collect()
}

/// Monte Carlo posterior predictive mean squared error on `heldout`.
pub fn predictive_mse<T: Real, S: LinearSystem<T> + ?Sized>(
    post: &PosteriorQ<T>,
    basis: &FeatureBasis<T>,
    system: &S,
    heldout: &ObservationSet<T>,
    samples: usize,
    seed: u64,
) -> Result<T> {
    let bm = eval_basis(basis, system.grid())?;
    predictive_mse_from(post, &bm, system, heldout, samples, seed)
}

pub fn predictive_mse_from<T: Real, S: LinearSystem<T> + ?Sized>(
    post: &PosteriorQ<T>,
    bm: &BasisMatrix<T>,
    system: &S,
    heldout: &ObservationSet<T>,
    samples: usize,
    seed: u64,
) -> Result<T> {
    if samples == 0 {
        return Err(Error::Config("predictive scores need at least one sample".into()));
    }
    let draws = predictive_draws(post, bm, system, heldout.windows(), samples, seed)?;
    let z = heldout.readings();
    let total: f64 = draws
        .iter()
        .flat_map(|d| d.iter().zip(z).map(|(p, y)| (*p - *y).as_f64().powi(2)))
        .sum();
    Ok(T::of(total / (samples * z.len()) as f64))
}

/// Gaussian negative log-likelihood of readings `z` under predictive draws:
/// per observation the draws give a mean and variance, to which `σ²` is added.
pub fn predictive_nll<T: Real>(draws: &[Vec<T>], z: &[T], sigma: T) -> Result<T> {
    if draws.is_empty() {
        return Err(Error::Config("predictive scores need at least one sample".into()));
    }
    let s = draws.len() as f64;
    let noise = sigma.as_f64().max(SIGMA_FLOOR).powi(2);
    let mut nll = 0.0;
    for (i, y) in z.iter().enumerate() {
        let mean = draws.iter().map(|d| d[i].as_f64()).sum::<f64>() / s;
        let var = draws.iter().map(|d| (d[i].as_f64() - mean).powi(2)).sum::<f64>() / s;
        let v = (var + noise).max(SIGMA_FLOOR * SIGMA_FLOOR);
        nll += 0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (y.as_f64() - mean).powi(2) / v);
    }
    Ok(T::of(nll))
}

/// Two-sided 95% standard normal quantile.
pub const CREDIBLE_Z: f64 = 1.959963984540054;

/// Fraction of cells where `truth` lies inside `mean ± z·√var`.
pub fn band_coverage<T: Real>(mean: &Field<T>, var: &Field<T>, truth: &Field<T>, z: f64) -> Result<f64> {
    if mean.grid() != truth.grid() || var.grid() != truth.grid() {
        return Err(Error::GridMismatch("band and truth live on different grids".into()));
    }
    let inside = mean
        .values()
        .iter()
        .zip(var.values())
        .zip(truth.values())
        .filter(|((m, v), t)| (t.as_f64() - m.as_f64()).abs() <= z * v.as_f64().max(0.0).sqrt())
        .count();
    Ok(inside as f64 / truth.values().len() as f64)
}

/// Knobs for [`nll_score`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreBudget {
    pub features: usize,
    pub samples: usize,
    pub basis_seed: u64,
    pub seed: u64,
}

impl Default for ScoreBudget {
    fn default() -> Self {
        Self {
            features: 100,
            samples: DEFAULT_PREDICTIVE_SAMPLES,
            basis_seed: 0,
            seed: 0,
        }
    }
}

/// Score a candidate (system, kernel) by the predictive NLL of the training
/// data: rebuild basis and adjoint bank, fit the posterior, push samples
/// forward, and evaluate the Gaussian NLL.
pub fn nll_score<T: Real, S: LinearSystem<T> + ?Sized>(
    system: &S,
    kernel: KernelParams<T>,
    data: &ObservationSet<T>,
    budget: &ScoreBudget,
) -> Result<T> {
    let grid = system.grid();
    let basis = sample_basis(budget.features, grid.ndim(), kernel, budget.basis_seed)?;
    let bm = eval_basis(&basis, grid)?;
    let adj = adjoint_bank(system, data.windows())?;
    let phi = assemble_phi_from(&adj, &bm, basis.seed(), system.name())?;
    let sigma = data.sigma().max(T::of(SIGMA_FLOOR));
    let post = posterior_q(&phi, data.readings(), sigma, &Prior::standard(basis.len()))?;
    let draws = predictive_draws(&post, &bm, system, data.windows(), budget.samples, budget.seed)?;
    predictive_nll(&draws, data.readings(), sigma)
}
