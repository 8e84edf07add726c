//! The reduced linear model `z = Φq + ε`: assembling Φ, least squares, and
//! the conjugate Gaussian posterior over `q`.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{eval_basis, BasisMatrix, FeatureBasis};
use crate::fields::{Field, Grid};
use crate::scalar::Real;

/// Condition number of `ΦᵀΦ` above which least squares is refused.
pub const ML_CONDITION_LIMIT: f64 = 1e12;

/// Φ with `[Φ]_{im} = ⟨v_i, φ_m⟩`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhiMatrix<T: Real> {
    entries: DMatrix<T>,
    pub basis_seed: u64,
    pub solver: String,
}

impl<T: Real> PhiMatrix<T> {
    pub fn new(entries: DMatrix<T>, basis_seed: u64, solver: impl Into<String>) -> Result<Self> {
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("Φ has non-finite entries".into()));
        }
        Ok(Self {
            entries,
            basis_seed,
            solver: solver.into(),
        })
    }

    pub fn n_obs(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.entries.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.entries
    }

    /// `Φq`.
    pub fn apply(&self, q: &[T]) -> Result<Vec<T>> {
        if q.len() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                got: q.len(),
            });
        }
        let v = &self.entries * DVector::from_column_slice(q);
        Ok(v.iter().copied().collect())
    }

    /// Rows `rows` only, in that order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            entries: self.entries.select_rows(rows),
            basis_seed: self.basis_seed,
            solver: self.solver.clone(),
        }
    }

    /// CSV with header `row,phi_0,…` and one line per observation.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["row".to_string()];
        header.extend((0..self.n_features()).map(|m| format!("phi_{m}")));
        out.write_record(&header)?;
        for i in 0..self.n_obs() {
            let mut rec = vec![i.to_string()];
            rec.extend(self.entries.row(i).iter().map(|v| format!("{:e}", v.as_f64())));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn check_bank<T: Real>(adjoints: &[Field<T>], grid: &Grid<T>) -> Result<()> {
    for (i, v) in adjoints.iter().enumerate() {
        if v.grid() != grid {
            return Err(Error::GridMismatch(format!("adjoint field {i} is not on the basis grid")));
        }
    }
    Ok(())
}

/// Assemble Φ from adjoint solutions and basis functions evaluated on `grid`.
pub fn assemble_phi<T: Real>(adjoints: &[Field<T>], basis: &FeatureBasis<T>, grid: &Grid<T>, solver: &str) -> Result<PhiMatrix<T>> {
    check_bank(adjoints, grid)?;
    let bm = eval_basis(basis, grid)?;
    assemble_phi_from(adjoints, &bm, basis.seed(), solver)
}

/// As [`assemble_phi`] with the basis already evaluated.
pub fn assemble_phi_from<T: Real>(adjoints: &[Field<T>], bm: &BasisMatrix<T>, basis_seed: u64, solver: &str) -> Result<PhiMatrix<T>> {
    check_bank(adjoints, bm.grid())?;
    let m = bm.n_features();
    // each entry is an independent fixed-order dot product
    let rows: Vec<Vec<T>> = adjoints.par_iter().map(|v| bm.project(v)).collect::<Result<_>>()?;
    let entries = DMatrix::from_fn(adjoints.len(), m, |i, j| rows[i][j]);
    PhiMatrix::new(entries, basis_seed, solver)
}

#[derive(Clone, Debug)]
pub struct MlEstimate<T: Real> {
    pub q: DVector<T>,
    pub covariance: DMatrix<T>,
    /// Condition number of `ΦᵀΦ + αI`.
    pub condition: f64,
}

/// Least squares `q̂ = (ΦᵀΦ)⁻¹Φᵀz` with `Var q̂ = σ²(ΦᵀΦ)⁻¹`, via SVD.
pub fn ml_estimate<T: Real>(phi: &PhiMatrix<T>, z: &[T], sigma: T) -> Result<MlEstimate<T>> {
    ml_estimate_ridge(phi, z, sigma, T::zero())
}

/// Ridge-regularised least squares minimising `‖z − Φq‖² + α‖q‖²`.
/// The reported covariance is the sampling covariance of the estimator.
pub fn ml_estimate_ridge<T: Real>(phi: &PhiMatrix<T>, z: &[T], sigma: T, alpha: T) -> Result<MlEstimate<T>> {
    let (n, m) = (phi.n_obs(), phi.n_features());
    if z.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: z.len() });
    }
    if alpha < T::zero() {
        return Err(Error::Config("ridge weight must be non-negative".into()));
    }
    let svd = phi.matrix().clone().svd(true, true);
    let s = &svd.singular_values;
    let smax = s.iter().copied().fold(T::zero(), |a, b| a.max(b));
    // n < M leaves M − n directions with zero singular value
    let smin = if n < m { T::zero() } else { s.iter().copied().fold(smax, |a, b| a.min(b)) };
    let condition = ((smax * smax + alpha) / (smin * smin + alpha)).as_f64();
    if !(condition <= ML_CONDITION_LIMIT) {
        return Err(Error::RankDeficient { condition });
    }
    let u = svd.u.as_ref().expect("svd computed with u");
    let vt = svd.v_t.as_ref().expect("svd computed with v_t");
    let utz = u.transpose() * DVector::from_column_slice(z);
    let k = s.len();
    let gain = DVector::from_fn(k, |i, _| s[i] / (s[i] * s[i] + alpha));
    let q = vt.transpose() * utz.component_mul(&gain);
    let g2 = DVector::from_fn(k, |i, _| gain[i] * gain[i] * sigma * sigma);
    let v = vt.transpose();
    let covariance = &v * DMatrix::from_diagonal(&g2) * v.transpose();
    Ok(MlEstimate { q, covariance, condition })
}

/// Gaussian prior `q ~ N(μ₀, Σ₀)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Prior<T: Real> {
    pub mean: DVector<T>,
    pub covariance: DMatrix<T>,
}

impl<T: Real> Prior<T> {
    /// `N(0, I_M)`, the prior that makes the feature expansion a truncated GP.
    pub fn standard(m: usize) -> Self {
        Self {
            mean: DVector::zeros(m),
            covariance: DMatrix::identity(m, m),
        }
    }

    pub fn new(mean: DVector<T>, covariance: DMatrix<T>) -> Result<Self> {
        let m = mean.len();
        if covariance.nrows() != m || covariance.ncols() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: covariance.nrows(),
            });
        }
        if Cholesky::new(covariance.clone()).is_none() {
            return Err(Error::Config("prior covariance is not positive definite".into()));
        }
        Ok(Self { mean, covariance })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    fn is_standard(&self) -> bool {
        self.mean.iter().all(|v| *v == T::zero()) && self.covariance == DMatrix::identity(self.len(), self.len())
    }

    /// `(Σ₀⁻¹, Σ₀⁻¹μ₀)`.
    fn precision_parts(&self) -> Result<(DMatrix<T>, DVector<T>)> {
        if self.is_standard() {
            return Ok((self.covariance.clone(), self.mean.clone()));
        }
        let chol = Cholesky::new(self.covariance.clone())
            .ok_or_else(|| Error::Config("prior covariance is not positive definite".into()))?;
        Ok((chol.inverse(), chol.solve(&self.mean)))
    }
}

/// Gaussian posterior over `q`. The covariance is held both dense and as an
/// upper-triangular factor `R` with `Σₙ = RRᵀ` (`R = L⁻ᵀ` for the Cholesky
/// factor `L` of the precision).
#[derive(Clone, Debug)]
pub struct PosteriorQ<T: Real> {
    mean: DVector<T>,
    factor: DMatrix<T>,
    covariance: DMatrix<T>,
    /// Diagonal jitter that had to be added to the precision.
    pub jitter: T,
}

impl<T: Real> PosteriorQ<T> {
    /// Rebuild from a mean and covariance factor (`Σ = RRᵀ`).
    pub fn from_factor(mean: DVector<T>, factor: DMatrix<T>) -> Result<Self> {
        let m = mean.len();
        if factor.nrows() != m || factor.ncols() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: factor.nrows(),
            });
        }
        let covariance = symmetrize(&factor * factor.transpose());
        Ok(Self {
            mean,
            factor,
            covariance,
            jitter: T::zero(),
        })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn mean(&self) -> &DVector<T> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<T> {
        &self.covariance
    }

    pub fn factor(&self) -> &DMatrix<T> {
        &self.factor
    }

    pub fn std_devs(&self) -> Vec<T> {
        (0..self.len()).map(|i| self.covariance[(i, i)].max(T::zero()).sqrt()).collect()
    }

    /// `φᵀΣₙφ` as `‖Rᵀφ‖²`, which is non-negative by construction.
    pub fn quadratic_form(&self, phi: &[T]) -> T {
        let v = self.factor.tr_mul(&DVector::from_column_slice(phi));
        v.norm_squared()
    }

    /// `count` draws `μₙ + Rη`, `η ~ N(0, I)`, from one seeded stream.
    pub fn sample_q(&self, count: usize, seed: u64) -> Vec<DVector<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = self.len();
        (0..count)
            .map(|_| {
                let eta = DVector::from_fn(m, |_, _| T::of(rng.sample::<f64, _>(StandardNormal)));
                &self.mean + &self.factor * eta
            })
            .collect()
    }

    pub fn to_record(&self, basis_seed: u64, config_hash: &str) -> PosteriorRecord {
        let m = self.len();
        PosteriorRecord {
            mean: self.mean.iter().map(|v| v.as_f64()).collect(),
            covariance_factor: (0..m).map(|i| (0..m).map(|j| self.factor[(i, j)].as_f64()).collect()).collect(),
            basis_seed,
            config_hash: config_hash.to_string(),
            jitter: self.jitter.as_f64(),
        }
    }

    pub fn from_record(rec: &PosteriorRecord) -> Result<Self> {
        let m = rec.mean.len();
        if rec.covariance_factor.len() != m || rec.covariance_factor.iter().any(|r| r.len() != m) {
            return Err(Error::Serde("posterior factor is not M × M".into()));
        }
        let mean = DVector::from_fn(m, |i, _| T::of(rec.mean[i]));
        let factor = DMatrix::from_fn(m, m, |i, j| T::of(rec.covariance_factor[i][j]));
        let mut post = Self::from_factor(mean, factor)?;
        post.jitter = T::of(rec.jitter);
        Ok(post)
    }
}

/// JSON form of a posterior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteriorRecord {
    pub mean: Vec<f64>,
    /// Row-major `R` with `Σₙ = RRᵀ`.
    pub covariance_factor: Vec<Vec<f64>>,
    pub basis_seed: u64,
    pub config_hash: String,
    pub jitter: f64,
}

fn symmetrize<T: Real>(a: DMatrix<T>) -> DMatrix<T> {
    let half = T::of(0.5);
    (&a + a.transpose()) * half
}

/// `ΦᵀΦ`.
pub fn gram<T: Real>(phi: &PhiMatrix<T>) -> DMatrix<T> {
    symmetrize(phi.matrix().tr_mul(phi.matrix()))
}

fn condition_estimate<T: Real>(a: &DMatrix<T>) -> f64 {
    let eig = a.clone().symmetric_eigenvalues();
    let max = eig.iter().map(|v| v.abs().as_f64()).fold(0.0, f64::max);
    let min = eig.iter().map(|v| v.abs().as_f64()).fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Cholesky of a symmetric matrix with jitter escalating from `1e-10‖A‖` to
/// `1e-6‖A‖`. Returns the factorization and the jitter used.
pub fn cholesky_with_jitter<T: Real>(a: &DMatrix<T>) -> Result<(Cholesky<T, Dyn>, T)> {
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok((c, T::zero()));
    }
    let scale = a.norm();
    let mut rel = 1e-10;
    while rel <= 1e-6 * (1.0 + 1e-9) {
        let jitter = scale * T::of(rel);
        let shifted = a + DMatrix::from_diagonal_element(a.nrows(), a.ncols(), jitter);
        if let Some(c) = Cholesky::new(shifted) {
            log::warn!("precision needed diagonal jitter {:.3e}", jitter.as_f64());
            return Ok((c, jitter));
        }
        rel *= 10.0;
    }
    Err(Error::Factorization {
        condition: condition_estimate(a),
    })
}

/// Conjugate posterior `Σₙ = (σ⁻²ΦᵀΦ + Σ₀⁻¹)⁻¹`,
/// `μₙ = Σₙ(σ⁻²Φᵀz + Σ₀⁻¹μ₀)`.
pub fn posterior_q<T: Real>(phi: &PhiMatrix<T>, z: &[T], sigma: T, prior: &Prior<T>) -> Result<PosteriorQ<T>> {
    if z.len() != phi.n_obs() {
        return Err(Error::DimensionMismatch {
            expected: phi.n_obs(),
            got: z.len(),
        });
    }
    let g = gram(phi);
    let ptz = phi.matrix().tr_mul(&DVector::from_column_slice(z));
    posterior_from_gram(&g, &ptz, sigma, prior)
}

/// As [`posterior_q`] from precomputed `ΦᵀΦ` and `Φᵀz`.
pub fn posterior_from_gram<T: Real>(gram: &DMatrix<T>, phi_t_z: &DVector<T>, sigma: T, prior: &Prior<T>) -> Result<PosteriorQ<T>> {
    let m = prior.len();
    if gram.nrows() != m || phi_t_z.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: gram.nrows(),
        });
    }
    if !(sigma > T::zero()) {
        return Err(Error::Config("noise standard deviation must be positive".into()));
    }
    let w = T::one() / (sigma * sigma);
    let (prior_prec, prior_shift) = prior.precision_parts()?;
    let precision = symmetrize(gram * w + prior_prec);
    let rhs = phi_t_z * w + prior_shift;
    let (chol, jitter) = cholesky_with_jitter(&precision)?;
    let mean = chol.solve(&rhs);
    let l = chol.l();
    let linv = l
        .solve_lower_triangular(&DMatrix::identity(m, m))
        .ok_or(Error::Factorization {
            condition: f64::INFINITY,
        })?;
    let factor = linv.transpose();
    let covariance = symmetrize(&factor * factor.transpose());
    if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Factorization {
            condition: condition_estimate(&precision),
        });
    }
    Ok(PosteriorQ {
        mean,
        factor,
        covariance,
        jitter,
    })
}

/// Diagnostic raised when a small basis cannot explain the data.
#[derive(Clone, Debug, PartialEq)]
pub struct Misspecification {
    /// `‖z − Φμₙ‖ / σ`.
    pub standardized_residual: f64,
    pub threshold: f64,
}

impl std::fmt::Display for Misspecification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "standardized residual {:.3} exceeds {:.3}: the basis is too small for the data, increase M",
            self.standardized_residual, self.threshold
        )
    }
}

/// Fires when `M < n/2` and `‖z − Φμₙ‖/σ > 3√n`.
pub fn misspecification<T: Real>(phi: &PhiMatrix<T>, z: &[T], sigma: T, post: &PosteriorQ<T>) -> Option<Misspecification> {
    let (n, m) = (phi.n_obs(), phi.n_features());
    if 2 * m >= n {
        return None;
    }
    let fit = phi.matrix() * post.mean();
    let resid: f64 = z
        .iter()
        .zip(fit.iter())
        .map(|(a, b)| (*a - *b).as_f64().powi(2))
        .sum::<f64>()
        .sqrt()
        / sigma.as_f64();
    let threshold = 3.0 * (n as f64).sqrt();
    (resid > threshold).then_some(Misspecification {
        standardized_residual: resid,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{sample_basis, KernelParams};
    use crate::fields::inner_product;
    use proptest::prelude::*;
    use rand::Rng;

    fn seeded(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn phi(n: usize, m: usize, seed: u64) -> PhiMatrix<f64> {
        PhiMatrix::new(seeded(n, m, seed), seed, "test").unwrap()
    }

    #[test]
    fn assembly_matches_naive_loop() {
        let g = Grid::interval(1.0, 50).unwrap();
        let basis = sample_basis(4, 1, KernelParams::new(0.3, 1.0).unwrap(), 5).unwrap();
        let adj: Vec<Field<f64>> = (0..3)
            .map(|i| Field::from_fn(&g, |x| (x[0] * (i + 1) as f64).sin()).unwrap())
            .collect();
        let p = assemble_phi(&adj, &basis, &g, "t").unwrap();
        let bm = eval_basis(&basis, &g).unwrap();
        for i in 0..3 {
            for m in 0..4 {
                // same fixed-order reduction, so bit-exact
                assert_eq!(p.matrix()[(i, m)], inner_product(&adj[i], &bm.row_field(m)).unwrap());
            }
        }
        let zero = assemble_phi(&[Field::zeros(&g)], &basis, &g, "t").unwrap();
        assert!(zero.matrix().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_by_one_phi_by_hand() {
        let g = Grid::interval(1.0, 4).unwrap();
        let basis = FeatureBasis::from_parts(1, vec![2.0], vec![0.5], KernelParams::new(1.0, 1.0).unwrap(), 0).unwrap();
        let v = Field::new(g.clone(), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = assemble_phi(&[v], &basis, &g, "t").unwrap();
        let amp = (2.0f64).sqrt();
        let want: f64 = [0.125, 0.375, 0.625, 0.875]
            .iter()
            .zip([1.0, 2.0, 3.0, 4.0])
            .map(|(t, w): (&f64, f64)| w * amp * (2.0 * t + 0.5).cos() * 0.25)
            .sum();
        assert!((p.matrix()[(0, 0)] - want).abs() < 1e-14);
    }

    #[test]
    fn ml_identity_and_exact_recovery() {
        let id = PhiMatrix::new(DMatrix::<f64>::identity(4, 4), 0, "t").unwrap();
        let z = [1.0, -2.0, 3.5, 0.25];
        let est = ml_estimate(&id, &z, 1.0).unwrap();
        for i in 0..4 {
            assert!((est.q[i] - z[i]).abs() < 1e-14);
        }
        let p = phi(30, 8, 11);
        let qs: Vec<f64> = (0..8).map(|i| i as f64 - 3.5).collect();
        let z = p.apply(&qs).unwrap();
        let est = ml_estimate(&p, &z, 0.1).unwrap();
        for i in 0..8 {
            assert!((est.q[i] - qs[i]).abs() <= 1e-8 * qs[i].abs().max(1.0));
        }
    }

    #[test]
    fn ml_rejects_duplicate_columns_and_short_data() {
        let mut m = seeded(10, 3, 2);
        let c = m.column(0).into_owned();
        m.set_column(2, &c);
        let p = PhiMatrix::new(m, 0, "t").unwrap();
        assert!(matches!(ml_estimate(&p, &[0.0; 10], 1.0), Err(Error::RankDeficient { .. })));
        assert!(matches!(ml_estimate(&phi(2, 3, 1), &[0.0; 2], 1.0), Err(Error::RankDeficient { .. })));
        // a ridge makes the problem well posed
        assert!(ml_estimate_ridge(&phi(2, 3, 1), &[1.0; 2], 1.0, 0.1).is_ok());
    }

    #[test]
    fn zero_phi_returns_the_prior() {
        let p = PhiMatrix::new(DMatrix::<f64>::zeros(5, 3), 0, "t").unwrap();
        let prior = Prior::new(
            DVector::from_vec(vec![1.0, -1.0, 0.5]),
            DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 0.5]),
        )
        .unwrap();
        let post = posterior_q(&p, &[1.0; 5], 0.3, &prior).unwrap();
        assert!((post.mean() - &prior.mean).amax() < 1e-12);
        assert!((post.covariance() - &prior.covariance).amax() < 1e-12);
    }

    #[test]
    fn huge_noise_returns_prior_mean() {
        let p = phi(6, 3, 4);
        let prior = Prior::new(DVector::from_vec(vec![0.5, 1.0, -2.0]), DMatrix::identity(3, 3)).unwrap();
        let post = posterior_q(&p, &[10.0; 6], 1e8, &prior).unwrap();
        assert!((post.mean() - &prior.mean).amax() < 1e-6);
    }

    #[test]
    fn direct_inverse_oracle() {
        let p = phi(3, 2, 9);
        let z = [0.3, -1.2, 2.0];
        let sigma = 0.7;
        let post = posterior_q(&p, &z, sigma, &Prior::standard(2)).unwrap();
        // brute force with the closed-form 2×2 inverse
        let a = p.matrix();
        let w = 1.0 / (sigma * sigma);
        let mut pr = [[0.0; 2]; 2];
        let mut b = [0.0; 2];
        for i in 0..3 {
            for r in 0..2 {
                b[r] += w * a[(i, r)] * z[i];
                for c in 0..2 {
                    pr[r][c] += w * a[(i, r)] * a[(i, c)];
                }
            }
        }
        pr[0][0] += 1.0;
        pr[1][1] += 1.0;
        let det = pr[0][0] * pr[1][1] - pr[0][1] * pr[1][0];
        let cov = [[pr[1][1] / det, -pr[0][1] / det], [-pr[1][0] / det, pr[0][0] / det]];
        let mean = [cov[0][0] * b[0] + cov[0][1] * b[1], cov[1][0] * b[0] + cov[1][1] * b[1]];
        for r in 0..2 {
            assert!((post.mean()[r] - mean[r]).abs() < 1e-12);
            for c in 0..2 {
                assert!((post.covariance()[(r, c)] - cov[r][c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jitter_rescues_semidefinite_and_fails_on_indefinite() {
        let mut a = DMatrix::<f64>::from_element(3, 3, 1.0);
        a[(2, 2)] = 1.0;
        let (_, j) = cholesky_with_jitter(&a).unwrap();
        assert!(j > 0.0 && j <= 1e-6 * a.norm());
        let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0, 1.0]));
        assert!(matches!(cholesky_with_jitter(&bad), Err(Error::Factorization { .. })));
    }

    #[test]
    fn record_round_trip() {
        let post = posterior_q(&phi(8, 4, 3), &[0.5; 8], 0.2, &Prior::standard(4)).unwrap();
        let rec = post.to_record(7, "abc");
        let json = serde_json::to_string(&rec).unwrap();
        let back: PosteriorRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rec);
        let again = PosteriorQ::<f64>::from_record(&back).unwrap();
        assert_eq!(again.mean(), post.mean());
        assert!((again.covariance() - post.covariance()).amax() < 1e-15);
    }

    #[test]
    fn samples_match_moments() {
        let post = posterior_q(&phi(8, 3, 3), &[0.5; 8], 0.5, &Prior::standard(3)).unwrap();
        let draws = post.sample_q(20000, 1);
        assert_eq!(post.sample_q(5, 9), post.sample_q(5, 9));
        let sd = post.std_devs();
        for c in 0..3 {
            let mean = draws.iter().map(|d| d[c]).sum::<f64>() / 20000.0;
            assert!((mean - post.mean()[c]).abs() < 3.0 * sd[c] / 20000f64.sqrt() * 1.5);
        }
    }

    #[test]
    fn misspecification_fires_only_for_bad_fits() {
        let p = phi(40, 3, 8);
        let good = p.apply(&[1.0, 2.0, 3.0]).unwrap();
        let post = posterior_q(&p, &good, 0.1, &Prior::standard(3)).unwrap();
        assert!(misspecification(&p, &good, 0.1, &post).is_none());
        let bad: Vec<f64> = (0..40).map(|i| if i % 2 == 0 { 5.0 } else { -5.0 }).collect();
        let post = posterior_q(&p, &bad, 0.1, &Prior::standard(3)).unwrap();
        assert!(misspecification(&p, &bad, 0.1, &post).is_some());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn posterior_covariance_below_prior(seed in 0u64..1000, n in 1usize..12, m in 1usize..6, sigma in 0.05f64..3.0) {
            let p = phi(n, m, seed);
            let z = vec![0.0; n];
            let post = posterior_q(&p, &z, sigma, &Prior::standard(m)).unwrap();
            let diff = DMatrix::identity(m, m) - post.covariance();
            let eig = diff.symmetric_eigenvalues();
            prop_assert!(eig.iter().all(|&e| e >= -1e-8));
            prop_assert!((post.covariance() - post.covariance().transpose()).amax() <= 1e-10 * post.covariance().amax());
        }

        #[test]
        fn extra_row_never_raises_variances(seed in 0u64..1000, n in 1usize..10, m in 1usize..6) {
            let full = phi(n + 1, m, seed);
            let rows: Vec<usize> = (0..n).collect();
            let part = full.select_rows(&rows);
            let a = posterior_q(&part, &vec![0.0; n], 0.5, &Prior::standard(m)).unwrap();
            let b = posterior_q(&full, &vec![0.0; n + 1], 0.5, &Prior::standard(m)).unwrap();
            for i in 0..m {
                prop_assert!(b.covariance()[(i, i)] <= a.covariance()[(i, i)] + 1e-10);
            }
        }

        #[test]
        fn row_permutation_invariance(seed in 0u64..1000, n in 2usize..12, m in 1usize..6) {
            let p = phi(n, m, seed);
            let z: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.reverse();
            perm.swap(0, n / 2);
            let zp: Vec<f64> = perm.iter().map(|&i| z[i]).collect();
            let a = posterior_q(&p, &z, 0.3, &Prior::standard(m)).unwrap();
            let b = posterior_q(&p.select_rows(&perm), &zp, 0.3, &Prior::standard(m)).unwrap();
            prop_assert!((a.mean() - b.mean()).amax() <= 1e-10 * (1.0 + a.mean().amax()));
            prop_assert!((a.covariance() - b.covariance()).amax() <= 1e-12);
        }
    }
}
