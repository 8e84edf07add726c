//! Observation functionals, readings, and the adjoint bank.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{inner_product, Field, Grid};
use crate::scalar::Real;
use crate::system::LinearSystem;

/// `n` observation functionals `h̃_i`, their readings `z`, and the noise
/// standard deviation `σ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet<T> {
    windows: Vec<Field<T>>,
    z: Vec<T>,
    sigma: T,
}

impl<T: Real> ObservationSet<T> {
    pub fn new(windows: Vec<Field<T>>, z: Vec<T>, sigma: T) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::Config("at least one observation is required".into()));
        }
        if z.len() != windows.len() {
            return Err(Error::DimensionMismatch {
                expected: windows.len(),
                got: z.len(),
            });
        }
        if !(sigma > T::zero()) || !sigma.is_finite() {
            return Err(Error::Config("noise standard deviation must be positive".into()));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("observations must be finite".into()));
        }
        let g = windows[0].grid();
        if windows.iter().any(|w| w.grid() != g) {
            return Err(Error::GridMismatch("observation windows live on different grids".into()));
        }
        Ok(Self { windows, z, sigma })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn windows(&self) -> &[Field<T>] {
        &self.windows
    }

    pub fn readings(&self) -> &[T] {
        &self.z
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn grid(&self) -> &Grid<T> {
        self.windows[0].grid()
    }

    /// The subset `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        Self::new(
            idx.iter().map(|&i| self.windows[i].clone()).collect(),
            idx.iter().map(|&i| self.z[i]).collect(),
            self.sigma,
        )
    }
}

/// Noiseless readings `⟨h̃_i, u⟩`.
pub fn observe<T: Real>(windows: &[Field<T>], u: &Field<T>) -> Result<Vec<T>> {
    windows.iter().map(|h| inner_product(h, u)).collect()
}

/// `values + σ·η` with `η` standard normal from a seeded stream.
pub fn add_noise<T: Real>(values: &[T], sigma: T, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    values
        .iter()
        .map(|&v| v + sigma * T::of(rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

/// Solve forward for `f`, observe through `windows`, and add noise. The
/// forward solution is returned alongside the data.
pub fn synthesize<T: Real, S: LinearSystem<T> + ?Sized>(
    system: &S,
    windows: Vec<Field<T>>,
    f: &Field<T>,
    sigma: T,
    noise_seed: u64,
) -> Result<(ObservationSet<T>, Field<T>)> {
    let u = system.forward(f)?;
    let clean = observe(&windows, &u)?;
    let z = if sigma > T::zero() { add_noise(&clean, sigma, noise_seed) } else { clean };
    // σ = 0 keeps readings exact; the set still needs a positive σ for inference
    let s = if sigma > T::zero() { sigma } else { T::of(1e-6) };
    Ok((ObservationSet::new(windows, z, s)?, u))
}

/// Solve `L*v_i = h̃_i` for every window, in parallel. Output order matches
/// input order regardless of scheduling.
pub fn adjoint_bank<T: Real, S: LinearSystem<T> + ?Sized>(system: &S, windows: &[Field<T>]) -> Result<Vec<Field<T>>> {
    windows
        .par_iter()
        .enumerate()
        .map(|(i, h)| system.adjoint(h).map_err(|e| e.context(format!("adjoint solve for observation {i}"))))
        .collect()
}
