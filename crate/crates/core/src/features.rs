//! Exponentiated-quadratic kernel and its random-Fourier-feature truncation.
//!
//! A basis of `M` features `φ_m(x) = √(2τ²/M) cos(w_mᵀx/λ + b_m)` with
//! `w_m ~ N(0, I)` and `b_m ~ U[0, 2π)` gives `Σ_m φ_m(x)φ_m(x') ≈ k(x, x')`.
//! With weights `q ~ N(0, I_M)` the forcing `f = Σ q_m φ_m` is a truncated
//! GP whose covariance is exactly that sum.
//!
//! Randomness: every feature owns one ChaCha8 stream (`stream = m`) of the
//! generator seeded with `seed`, drawing `dim` standard normals and then one
//! uniform phase. A basis is therefore a pure function of `(seed, M, dim)`
//! and the first `M'` features of a larger basis equal a size-`M'` basis.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{Field, Grid};
use crate::scalar::{pairwise_dot, Real};

/// EQ kernel hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams<T> {
    /// Lengthscale `λ`.
    pub lengthscale: T,
    /// Variance `τ²`.
    pub variance: T,
}

impl<T: Real> KernelParams<T> {
    pub fn new(lengthscale: T, variance: T) -> Result<Self> {
        if !(lengthscale > T::zero()) || !(variance > T::zero()) {
            return Err(Error::Config(format!(
                "kernel needs lengthscale > 0 and variance > 0 (got {lengthscale}, {variance})"
            )));
        }
        Ok(Self { lengthscale, variance })
    }
}

/// `τ² exp(−‖x − x'‖² / 2λ²)`.
pub fn eq_kernel<T: Real>(x: &[T], y: &[T], k: &KernelParams<T>) -> Result<T> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let d2 = x.iter().zip(y).fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
    let two = T::of(2.0);
    Ok(k.variance * (-d2 / (two * k.lengthscale * k.lengthscale)).exp())
}

/// `M` random Fourier features over a `dim`-dimensional input.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBasis<T> {
    dim: usize,
    /// Row-major `M × dim` standard-normal frequencies.
    frequencies: Vec<T>,
    phases: Vec<T>,
    kernel: KernelParams<T>,
    seed: u64,
}

/// Generator used for feature `m`.
fn feature_rng(seed: u64, m: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(m as u64);
    rng
}

/// Draw one feature's `(w, b)` in `f64`.
fn draw_feature(seed: u64, m: usize, dim: usize) -> (Vec<f64>, f64) {
    let mut rng = feature_rng(seed, m);
    let w = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let tau = std::f64::consts::TAU;
    let mut b = rng.random::<f64>() * tau;
    if b >= tau {
        b = 0.0;
    }
    (w, b)
}

/// Sample a basis of `m` features; deterministic in `seed`.
pub fn sample_basis<T: Real>(m: usize, dim: usize, kernel: KernelParams<T>, seed: u64) -> Result<FeatureBasis<T>> {
    if m == 0 || dim == 0 {
        return Err(Error::Config("feature basis needs M ≥ 1 and dim ≥ 1".into()));
    }
    KernelParams::new(kernel.lengthscale, kernel.variance)?;
    let mut frequencies = Vec::with_capacity(m * dim);
    let mut phases = Vec::with_capacity(m);
    for j in 0..m {
        let (w, b) = draw_feature(seed, j, dim);
        frequencies.extend(w.into_iter().map(T::of));
        phases.push(T::of(b));
    }
    Ok(FeatureBasis {
        dim,
        frequencies,
        phases,
        kernel,
        seed,
    })
}

impl<T: Real> FeatureBasis<T> {
    /// Basis with explicit frequencies (`M × dim`, row-major) and phases.
    pub fn from_parts(dim: usize, frequencies: Vec<T>, phases: Vec<T>, kernel: KernelParams<T>, seed: u64) -> Result<Self> {
        let m = phases.len();
        if m == 0 || dim == 0 || frequencies.len() != m * dim {
            return Err(Error::DimensionMismatch {
                expected: m * dim,
                got: frequencies.len(),
            });
        }
        if phases.iter().any(|&b| b < T::zero() || b >= T::two_pi()) {
            return Err(Error::Config("phases must lie in [0, 2π)".into()));
        }
        KernelParams::new(kernel.lengthscale, kernel.variance)?;
        Ok(Self {
            dim,
            frequencies,
            phases,
            kernel,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kernel(&self) -> &KernelParams<T> {
        &self.kernel
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn frequency(&self, m: usize) -> &[T] {
        &self.frequencies[m * self.dim..(m + 1) * self.dim]
    }

    pub fn phase(&self, m: usize) -> T {
        self.phases[m]
    }

    /// `√(2τ²/M)`, the bound on every `|φ_m|`.
    pub fn amplitude(&self) -> T {
        (T::of(2.0) * self.kernel.variance / T::of_usize(self.len())).sqrt()
    }

    /// `φ_m(x)`.
    #[inline]
    pub fn feature(&self, m: usize, x: &[T]) -> T {
        let w = self.frequency(m);
        let arg = w.iter().zip(x).fold(T::zero(), |acc, (&wi, &xi)| acc + wi * xi);
        self.amplitude() * (arg / self.kernel.lengthscale + self.phases[m]).cos()
    }

    /// All `M` features at `x`.
    pub fn features_at(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_dim(x.len())?;
        Ok((0..self.len()).map(|m| self.feature(m, x)).collect())
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d == self.dim {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dim,
                got: d,
            })
        }
    }

    /// The first `m` features, with amplitude renormalised to `√(2τ²/m)`.
    pub fn truncated(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.len() {
            return Err(Error::Config(format!("cannot truncate {} features to {m}", self.len())));
        }
        Ok(Self {
            dim: self.dim,
            frequencies: self.frequencies[..m * self.dim].to_vec(),
            phases: self.phases[..m].to_vec(),
            kernel: self.kernel,
            seed: self.seed,
        })
    }

    pub fn to_spec(&self, explicit: bool) -> BasisSpec {
        BasisSpec {
            seed: self.seed,
            m: self.len(),
            dim: self.dim,
            lengthscale: self.kernel.lengthscale.as_f64(),
            variance: self.kernel.variance.as_f64(),
            frequencies: explicit.then(|| {
                (0..self.len())
                    .map(|m| self.frequency(m).iter().map(|w| w.as_f64()).collect())
                    .collect()
            }),
            phases: explicit.then(|| self.phases.iter().map(|b| b.as_f64()).collect()),
        }
    }

    pub fn from_spec(spec: &BasisSpec) -> Result<Self> {
        let kernel = KernelParams::new(T::of(spec.lengthscale), T::of(spec.variance))?;
        match (&spec.frequencies, &spec.phases) {
            (Some(w), Some(b)) => {
                if w.len() != spec.m || w.iter().any(|row| row.len() != spec.dim) {
                    return Err(Error::Serde("frequency array does not match M × dim".into()));
                }
                let freq = w.iter().flatten().map(|&v| T::of(v)).collect();
                let phases = b.iter().map(|&v| T::of(v)).collect();
                Self::from_parts(spec.dim, freq, phases, kernel, spec.seed)
            }
            (None, None) => sample_basis(spec.m, spec.dim, kernel, spec.seed),
            _ => Err(Error::Serde("frequencies and phases must be given together".into())),
        }
    }
}

/// JSON form of a basis. Without the explicit arrays the basis is regenerated
/// from the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    pub seed: u64,
    #[serde(rename = "M")]
    pub m: usize,
    pub dim: usize,
    pub lengthscale: f64,
    pub variance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequencies: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases: Option<Vec<f64>>,
}

/// Basis functions evaluated on every cell of a grid: row `m` is `φ_m`.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisMatrix<T> {
    grid: Grid<T>,
    m: usize,
    data: Vec<T>,
}

impl<T: Real> BasisMatrix<T> {
    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn n_features(&self) -> usize {
        self.m
    }

    pub fn row(&self, m: usize) -> &[T] {
        let g = self.grid.len();
        &self.data[m * g..(m + 1) * g]
    }

    pub fn row_field(&self, m: usize) -> Field<T> {
        Field::from_parts(self.grid.clone(), self.row(m).to_vec())
    }

    /// Feature vector `(φ_1(x_g), …, φ_M(x_g))` at cell `g`.
    pub fn column(&self, g: usize) -> Vec<T> {
        let n = self.grid.len();
        (0..self.m).map(|m| self.data[m * n + g]).collect()
    }

    /// `Σ_m q_m φ_m` on the grid.
    pub fn combine(&self, q: &[T]) -> Result<Field<T>> {
        if q.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                got: q.len(),
            });
        }
        let g = self.grid.len();
        let values: Vec<T> = (0..g)
            .into_par_iter()
            .with_min_len(1024)
            .map(|c| {
                let mut acc = T::zero();
                for (m, &qm) in q.iter().enumerate() {
                    acc += qm * self.data[m * g + c];
                }
                acc
            })
            .collect();
        Ok(Field::from_parts(self.grid.clone(), values))
    }

    /// `⟨v, φ_m⟩` for every `m`.
    pub fn project(&self, v: &Field<T>) -> Result<Vec<T>> {
        if v.grid() != &self.grid {
            return Err(Error::GridMismatch("field and basis matrix live on different grids".into()));
        }
        let vol = self.grid.cell_volume();
        Ok((0..self.m).map(|m| pairwise_dot(v.values(), self.row(m)) * vol).collect())
    }
}

/// Evaluate every feature at every cell centre.
pub fn eval_basis<T: Real>(basis: &FeatureBasis<T>, grid: &Grid<T>) -> Result<BasisMatrix<T>> {
    basis.check_dim(grid.ndim())?;
    let centers = grid.centers();
    let d = grid.ndim();
    let g = grid.len();
    let m = basis.len();
    let mut data = vec![T::zero(); m * g];
    data.par_chunks_mut(g).enumerate().for_each(|(j, row)| {
        for (c, out) in row.iter_mut().enumerate() {
            *out = basis.feature(j, &centers[c * d..(c + 1) * d]);
        }
    });
    Ok(BasisMatrix {
        grid: grid.clone(),
        m,
        data,
    })
}

/// Truncated kernel `Σ_m φ_m(x) φ_m(x')`.
pub fn kernel_approx<T: Real>(basis: &FeatureBasis<T>, x: &[T], y: &[T]) -> Result<T> {
    basis.check_dim(x.len())?;
    basis.check_dim(y.len())?;
    let fx = basis.features_at(x)?;
    let fy = basis.features_at(y)?;
    Ok(pairwise_dot(&fx, &fy))
}

/// Field `Σ_m q_m φ_m(x_g)`.
pub fn forcing_from_weights<T: Real>(basis: &FeatureBasis<T>, q: &[T], grid: &Grid<T>) -> Result<Field<T>> {
    if q.len() != basis.len() {
        return Err(Error::DimensionMismatch {
            expected: basis.len(),
            got: q.len(),
        });
    }
    basis.check_dim(grid.ndim())?;
    // cell by cell, so a large basis never needs an M × G matrix
    let d = grid.ndim();
    let values: Vec<T> = (0..grid.len())
        .into_par_iter()
        .with_min_len(256)
        .map_init(
            || vec![T::zero(); d],
            |x, c| {
                grid.center_into(c, x);
                let mut acc = T::zero();
                for (m, &qm) in q.iter().enumerate() {
                    acc += qm * basis.feature(m, x);
                }
                acc
            },
        )
        .collect();
    Field::new(grid.clone(), values)
}

/// `n` i.i.d. standard normals from a seeded ChaCha8 generator.
pub fn standard_normals<T: Real>(n: usize, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| T::of(rng.sample::<f64, _>(StandardNormal))).collect()
}

/// Draw `q ~ N(0, I_M)` and return it with the forcing it induces.
pub fn sample_prior_forcing<T: Real>(basis: &FeatureBasis<T>, grid: &Grid<T>, seed: u64) -> Result<(Vec<T>, Field<T>)> {
    let q = standard_normals(basis.len(), seed);
    let f = forcing_from_weights(basis, &q, grid)?;
    Ok((q, f))
}
