//! Batch-update random-walk Metropolis–Hastings over the weights `q`, plus
//! the convergence diagnostics used to judge it.

use std::io::Write;

use nalgebra::DVector;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::BasisMatrix;
use crate::fields::Field;
use crate::inference::{observe, PhiMatrix, Prior};
use crate::scalar::Real;
use crate::system::LinearSystem;

/// A run of this many consecutive rejections aborts the chain.
pub const STALL_LIMIT: usize = 1000;

/// Acceptance band the pre-run tuner aims for.
pub const TARGET_ACCEPTANCE: (f64, f64) = (0.25, 0.40);

/// Split-R̂ at or below this value counts as converged.
pub const RHAT_THRESHOLD: f64 = 1.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub steps: usize,
    pub burn_in: usize,
    pub proposal_scale: f64,
    pub seed: u64,
    pub batch_size: usize,
}

impl ChainConfig {
    pub fn new(steps: usize, burn_in: usize, proposal_scale: f64, seed: u64, batch_size: usize) -> Result<Self> {
        let cfg = Self {
            steps,
            burn_in,
            proposal_scale,
            seed,
            batch_size,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 20 000 steps, 10% burn-in, batches of `min(M, 5)`.
    pub fn default_for(m: usize, seed: u64) -> Self {
        Self {
            steps: 20_000,
            burn_in: 2_000,
            proposal_scale: 0.1,
            seed,
            batch_size: m.clamp(1, 5),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.steps {
            return Err(Error::Config("burn_in must be smaller than steps".into()));
        }
        if !(self.proposal_scale > 0.0) || !self.proposal_scale.is_finite() {
            return Err(Error::Config("proposal_scale must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Every state of the chain (burn-in included) with its log target and
/// whether the step was an accepted move.
#[derive(Clone, Debug, PartialEq)]
pub struct Chain<T> {
    pub states: Vec<Vec<T>>,
    pub log_target: Vec<T>,
    pub accepted: Vec<bool>,
    pub burn_in: usize,
    /// Log-target evaluations, each one forward-model evaluation.
    pub evaluations: usize,
}

impl<T: Real> Chain<T> {
    pub fn acceptance_rate(&self) -> f64 {
        if self.accepted.is_empty() {
            return 0.0;
        }
        self.accepted.iter().filter(|&&a| a).count() as f64 / self.accepted.len() as f64
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    /// Post-burn-in trace of coordinate `c`.
    pub fn trace(&self, c: usize) -> Vec<f64> {
        self.states[self.burn_in..].iter().map(|s| s[c].as_f64()).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        (0..self.dim()).map(|c| mean(&self.trace(c))).collect()
    }

    pub fn std_devs(&self) -> Vec<f64> {
        (0..self.dim()).map(|c| variance(&self.trace(c)).sqrt()).collect()
    }

    /// CSV `step,q_0,…,log_target,accepted`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["step".to_string()];
        header.extend((0..self.dim()).map(|c| format!("q_{c}")));
        header.push("log_target".into());
        header.push("accepted".into());
        out.write_record(&header)?;
        for (k, s) in self.states.iter().enumerate() {
            let mut rec = vec![k.to_string()];
            rec.extend(s.iter().map(|v| format!("{:e}", v.as_f64())));
            rec.push(format!("{:e}", self.log_target[k].as_f64()));
            rec.push(u8::from(self.accepted[k]).to_string());
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

struct Run<T> {
    chain: Chain<T>,
    stalled: bool,
}

fn run<T: Real, F: FnMut(&[T]) -> T>(
    log_target: &mut F,
    init: &[T],
    steps: usize,
    scale: f64,
    batch: usize,
    rng: &mut ChaCha8Rng,
    abort_on_stall: bool,
) -> Result<Run<T>> {
    let m = init.len();
    if m == 0 {
        return Err(Error::Config("the chain needs at least one coordinate".into()));
    }
    let batch = batch.min(m);
    let mut x = init.to_vec();
    let mut lp = log_target(&x);
    if !lp.is_finite() {
        return Err(Error::Domain("log target is not finite at the initial state".into()));
    }
    let mut chain = Chain {
        states: Vec::with_capacity(steps),
        log_target: Vec::with_capacity(steps),
        accepted: Vec::with_capacity(steps),
        burn_in: 0,
        evaluations: 1,
    };
    let mut since_accept = 0usize;
    let mut stalled = false;
    let mut y = x.clone();
    for _ in 0..steps {
        y.copy_from_slice(&x);
        for c in sample_indices(rng, m, batch).iter() {
            y[c] += T::of(scale * rng.sample::<f64, _>(StandardNormal));
        }
        let lq = log_target(&y);
        chain.evaluations += 1;
        let u: f64 = rng.random();
        let ok = lq.is_finite() && u.ln() < (lq - lp).as_f64();
        if ok {
            std::mem::swap(&mut x, &mut y);
            lp = lq;
            since_accept = 0;
        } else {
            since_accept += 1;
            if since_accept >= STALL_LIMIT {
                stalled = true;
                if abort_on_stall {
                    break;
                }
            }
        }
        chain.states.push(x.clone());
        chain.log_target.push(lp);
        chain.accepted.push(ok);
    }
    Ok(Run { chain, stalled })
}

/// Random-walk MH with Gaussian proposals on `cfg.batch_size` random
/// coordinates per step. Deterministic for a given seed.
pub fn rw_mh<T: Real, F: FnMut(&[T]) -> T>(mut log_target: F, init: &[T], cfg: &ChainConfig) -> Result<Chain<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let r = run(&mut log_target, init, cfg.steps, cfg.proposal_scale, cfg.batch_size, &mut rng, true)?;
    if r.stalled {
        return Err(Error::NoAcceptance { steps: STALL_LIMIT });
    }
    let mut chain = r.chain;
    chain.burn_in = cfg.burn_in;
    Ok(chain)
}

/// Outcome of the pre-run tuner.
#[derive(Clone, Debug, PartialEq)]
pub struct Tuning<T> {
    pub proposal_scale: f64,
    pub acceptance: f64,
    /// Last state of the final pre-run, a warm start for the main chain.
    pub state: Vec<T>,
    pub evaluations: usize,
}

/// Adjust the proposal scale with short pre-runs until acceptance falls in
/// [`TARGET_ACCEPTANCE`], each pre-run continuing from the last state.
pub fn tune_proposal<T: Real, F: FnMut(&[T]) -> T>(
    mut log_target: F,
    init: &[T],
    batch_size: usize,
    seed: u64,
    pre_run: usize,
) -> Result<Tuning<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let mut scale = 2.38 / (batch_size.min(init.len()).max(1) as f64).sqrt();
    let mut state = init.to_vec();
    let mut evaluations = 0;
    let (lo, hi) = TARGET_ACCEPTANCE;
    let mut rate = 0.0;
    for _ in 0..40 {
        let r = run(&mut log_target, &state, pre_run, scale, batch_size, &mut rng, false)?;
        evaluations += r.chain.evaluations;
        rate = r.chain.acceptance_rate();
        state = r.chain.states.last().cloned().unwrap_or(state);
        if (lo..=hi).contains(&rate) {
            break;
        }
        let target = 0.5 * (lo + hi);
        scale *= (3.0 * (rate - target)).exp();
    }
    Ok(Tuning {
        proposal_scale: scale,
        acceptance: rate,
        state,
        evaluations,
    })
}

/// Independent chains on one target, one RNG sub-stream each.
pub fn run_chains<T: Real, F>(log_target: F, inits: &[Vec<T>], cfg: &ChainConfig) -> Result<Vec<Chain<T>>>
where
    F: Fn(&[T]) -> T + Sync,
{
    inits
        .par_iter()
        .enumerate()
        .map(|(i, init)| {
            cfg.validate()?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let mut lt = |q: &[T]| log_target(q);
            let r = run(&mut lt, init, cfg.steps, cfg.proposal_scale, cfg.batch_size, &mut rng, true)?;
            if r.stalled {
                return Err(Error::NoAcceptance { steps: STALL_LIMIT });
            }
            let mut c = r.chain;
            c.burn_in = cfg.burn_in;
            Ok(c)
        })
        .collect()
}

/// Effective sample size by overlapping batch means with batch length
/// `⌊n^{2/3}⌋`. Shorter `⌊√n⌋` batches are biased low for the slowly mixing
/// random-walk chains used here, which inflates the ESS.
/// `None` for a constant trace.
pub fn ess_batch_means(x: &[f64]) -> Option<f64> {
    let n = x.len();
    let var = variance(x);
    if n < 4 || !(var > 0.0) {
        return None;
    }
    let b = ((n as f64).powf(2.0 / 3.0).floor() as usize).clamp(1, n - 1);
    let mu = mean(x);
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for &v in x {
        prefix.push(prefix.last().unwrap() + (v - mu));
    }
    let ss: f64 = (0..=n - b).map(|j| ((prefix[j + b] - prefix[j]) / b as f64).powi(2)).sum();
    let sigma2 = (n * b) as f64 * ss / ((n - b) * (n - b + 1)) as f64;
    if !(sigma2 > 0.0) {
        return Some(n as f64);
    }
    Some((n as f64 * var / sigma2).min(n as f64))
}

/// Split-R̂ over one or more chains of one coordinate: each chain is cut in
/// half and `R̂ = √((W + B/n) / W)`, `B/n` the variance of half-chain means.
pub fn split_rhat(chains: &[&[f64]]) -> Option<f64> {
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| {
            let h = c.len() / 2;
            [&c[..h], &c[c.len() - h..]]
        })
        .collect();
    let n = halves.first()?.len();
    if n < 2 {
        return None;
    }
    let w = mean(&halves.iter().map(|h| variance(h)).collect::<Vec<_>>());
    if !(w > 0.0) {
        return None;
    }
    let b_over_n = variance(&halves.iter().map(|h| mean(h)).collect::<Vec<_>>());
    Some(((w + b_over_n) / w).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChainDiagnostics {
    pub ess: Vec<f64>,
    pub rhat: Vec<f64>,
    /// Coordinates whose trace never moved; their ESS is reported as 0.
    pub degenerate: Vec<bool>,
}

impl ChainDiagnostics {
    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().copied().fold(f64::NAN, f64::max)
    }

    pub fn min_ess(&self) -> f64 {
        self.ess.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn converged(&self) -> bool {
        !self.degenerate.iter().any(|&d| d) && self.rhat.iter().all(|&r| r <= RHAT_THRESHOLD)
    }
}

/// ESS and split-R̂ per coordinate on the post-burn-in part of `chains`.
pub fn chain_diagnostics<T: Real>(chains: &[Chain<T>]) -> ChainDiagnostics {
    let m = chains.first().map_or(0, Chain::dim);
    let mut d = ChainDiagnostics {
        ess: Vec::with_capacity(m),
        rhat: Vec::with_capacity(m),
        degenerate: Vec::with_capacity(m),
    };
    for c in 0..m {
        let traces: Vec<Vec<f64>> = chains.iter().map(|ch| ch.trace(c)).collect();
        let ess: Option<f64> = traces.iter().map(|t| ess_batch_means(t)).sum();
        d.degenerate.push(ess.is_none());
        d.ess.push(ess.unwrap_or(0.0));
        let refs: Vec<&[f64]> = traces.iter().map(Vec::as_slice).collect();
        d.rhat.push(split_rhat(&refs).unwrap_or(f64::INFINITY));
    }
    d
}

/// `log p(q | z)` up to a constant for `z = Φq + ε`, `q ~ N(μ₀, Σ₀)`.
pub struct LinearGaussianTarget<T: Real> {
    phi: PhiMatrix<T>,
    z: DVector<T>,
    sigma: T,
    prior_mean: DVector<T>,
    prior_precision: nalgebra::DMatrix<T>,
}

impl<T: Real> LinearGaussianTarget<T> {
    pub fn new(phi: PhiMatrix<T>, z: &[T], sigma: T, prior: &Prior<T>) -> Result<Self> {
        if z.len() != phi.n_obs() {
            return Err(Error::DimensionMismatch {
                expected: phi.n_obs(),
                got: z.len(),
            });
        }
        let prior_precision = nalgebra::Cholesky::new(prior.covariance.clone())
            .ok_or_else(|| Error::Config("prior covariance is not positive definite".into()))?
            .inverse();
        Ok(Self {
            phi,
            z: DVector::from_column_slice(z),
            sigma,
            prior_mean: prior.mean.clone(),
            prior_precision,
        })
    }

    pub fn log_density(&self, q: &[T]) -> T {
        let q = DVector::from_column_slice(q);
        let r = &self.z - self.phi.matrix() * &q;
        let d = &q - &self.prior_mean;
        let half = T::of(0.5);
        -(r.norm_squared() / (self.sigma * self.sigma) + d.dot(&(&self.prior_precision * &d))) * half
    }
}

/// The same posterior with the likelihood evaluated by a forward solve per
/// call, as a sampler without the adjoint reduction must do.
pub struct ForwardModelTarget<'a, T: Real, S: LinearSystem<T> + ?Sized> {
    pub system: &'a S,
    pub basis: &'a BasisMatrix<T>,
    pub windows: &'a [Field<T>],
    pub z: &'a [T],
    pub sigma: T,
}

impl<T: Real, S: LinearSystem<T> + ?Sized> ForwardModelTarget<'_, T, S> {
    /// Standard-normal prior; solver failures give `−∞`.
    pub fn log_density(&self, q: &[T]) -> T {
        let eval = || -> Result<T> {
            let f = self.basis.combine(q)?;
            let u = self.system.forward(&f)?;
            let pred = observe(self.windows, &u)?;
            let mut ss = T::zero();
            for (p, y) in pred.iter().zip(self.z) {
                ss += (*p - *y) * (*p - *y);
            }
            let qq: T = q.iter().fold(T::zero(), |a, &v| a + v * v);
            Ok(-(ss / (self.sigma * self.sigma) + qq) * T::of(0.5))
        };
        eval().unwrap_or_else(|_| T::of(f64::NEG_INFINITY))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn std_normal(q: &[f64]) -> f64 {
        -0.5 * q.iter().map(|v| v * v).sum::<f64>()
    }

    #[test]
    fn config_validation() {
        assert!(ChainConfig::new(100, 100, 0.1, 0, 1).is_err());
        assert!(ChainConfig::new(100, 10, 0.0, 0, 1).is_err());
        assert!(ChainConfig::new(100, 10, 0.1, 0, 0).is_err());
        assert_eq!(ChainConfig::default_for(10, 0).batch_size, 5);
        assert_eq!(ChainConfig::default_for(3, 0).batch_size, 3);
    }

    #[test]
    fn standard_normal_target() {
        let cfg = ChainConfig::new(50_000, 2_000, 2.4, 17, 1).unwrap();
        let chain = rw_mh(std_normal, &[0.0], &cfg).unwrap();
        let t = chain.trace(0);
        let ess = ess_batch_means(&t).unwrap();
        let m = mean(&t);
        let v = variance(&t);
        assert!(m.abs() <= 3.0 * (v / ess).sqrt(), "mean {m}, ess {ess}");
        assert!((v - 1.0).abs() <= 0.1, "variance {v}");
    }

    #[test]
    fn seed_determinism() {
        let cfg = ChainConfig::new(2_000, 100, 0.7, 5, 2).unwrap();
        let a = rw_mh(std_normal, &[0.0, 1.0, 2.0], &cfg).unwrap();
        let b = rw_mh(std_normal, &[0.0, 1.0, 2.0], &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tiny_scale_accepts_almost_everything() {
        let cfg = ChainConfig::new(5_000, 10, 1e-6, 1, 1).unwrap();
        let chain = rw_mh(std_normal, &[0.3], &cfg).unwrap();
        assert!(chain.acceptance_rate() > 0.999);
    }

    #[test]
    fn stalled_chain_is_an_error() {
        let cfg = ChainConfig::new(3_000, 10, 1e4, 1, 1).unwrap();
        let target = |q: &[f64]| -1e6 * q[0] * q[0];
        assert!(matches!(rw_mh(target, &[0.0], &cfg), Err(Error::NoAcceptance { .. })));
        assert!(matches!(rw_mh(|_: &[f64]| f64::NAN, &[0.0], &cfg), Err(Error::Domain(_))));
    }

    #[test]
    fn tuner_lands_in_the_band() {
        let t = tune_proposal(std_normal, &[0.0; 10], 5, 3, 1000).unwrap();
        assert!((0.2..=0.45).contains(&t.acceptance), "{}", t.acceptance);
    }

    #[test]
    fn ess_of_iid_and_constant_chains() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<f64> = (0..40_000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let ess = ess_batch_means(&x).unwrap();
        assert!((ess - 40_000.0).abs() <= 0.2 * 40_000.0, "{ess}");
        assert!(ess_batch_means(&[1.5; 100]).is_none());
        let constant = Chain {
            states: vec![vec![1.0]; 100],
            log_target: vec![0.0; 100],
            accepted: vec![false; 100],
            burn_in: 0,
            evaluations: 100,
        };
        let d = chain_diagnostics(&[constant]);
        assert_eq!(d.ess, vec![0.0]);
        assert_eq!(d.degenerate, vec![true]);
        assert!(!d.converged());
    }

    #[test]
    fn identical_halves_give_unit_rhat() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let half: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
        let x: Vec<f64> = half.iter().chain(&half).copied().collect();
        assert!((split_rhat(&[&x]).unwrap() - 1.0).abs() < 1e-6);
        let drift: Vec<f64> = (0..1000).map(|i| i as f64 / 100.0 + rng.random::<f64>()).collect();
        assert!(split_rhat(&[&drift]).unwrap() > 1.5);
    }

    #[test]
    fn stationary_histogram_passes_chi_square() {
        let cfg = ChainConfig::new(100_000, 1_000, 2.4, 99, 1).unwrap();
        let chain = rw_mh(std_normal, &[0.0], &cfg).unwrap();
        let t = chain.trace(0);
        // thin well beyond the autocorrelation time so counts are near independent
        let thinned: Vec<f64> = t.iter().step_by(20).copied().collect();
        let edges = [-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5];
        let cdf = |x: f64| 0.5 * (1.0 + libm_erf(x / 2f64.sqrt()));
        let mut counts = vec![0usize; edges.len() + 1];
        for &v in &thinned {
            counts[edges.iter().filter(|&&e| v >= e).count()] += 1;
        }
        let n = thinned.len() as f64;
        let mut chi2 = 0.0;
        for (k, &c) in counts.iter().enumerate() {
            let lo = if k == 0 { 0.0 } else { cdf(edges[k - 1]) };
            let hi = if k == edges.len() { 1.0 } else { cdf(edges[k]) };
            let e = n * (hi - lo);
            chi2 += (c as f64 - e).powi(2) / e;
        }
        // 99th percentile of χ² with 7 degrees of freedom
        assert!(chi2 < 18.475, "χ² = {chi2}");
    }

    /// Abramowitz–Stegun 7.1.26, |error| < 1.5e-7.
    fn libm_erf(x: f64) -> f64 {
        let s = x.signum();
        let x = x.abs();
        let t = 1.0 / (1.0 + 0.3275911 * x);
        let y = 1.0 - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t + 0.254829592) * t * (-x * x).exp();
        s * y
    }

    #[test]
    fn linear_gaussian_target_peaks_at_the_posterior_mean() {
        use crate::inference::posterior_q;
        let phi = PhiMatrix::new(nalgebra::DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 2.0, 0.7, 0.1]), 0, "t").unwrap();
        let z = [0.4, -1.0, 2.0];
        let prior = Prior::standard(2);
        let post = posterior_q(&phi, &z, 0.5, &prior).unwrap();
        let target = LinearGaussianTarget::new(phi, &z, 0.5, &prior).unwrap();
        let mu = [post.mean()[0], post.mean()[1]];
        let at = target.log_density(&mu);
        for d in [[1e-3, 0.0], [0.0, 1e-3], [-1e-3, 5e-4]] {
            assert!(target.log_density(&[mu[0] + d[0], mu[1] + d[1]]) < at);
        }
    }

    #[test]
    fn chain_csv_has_header_and_rows() {
        let cfg = ChainConfig::new(10, 2, 0.5, 1, 1).unwrap();
        let chain = rw_mh(std_normal, &[0.0, 0.0], &cfg).unwrap();
        let mut buf = Vec::new();
        chain.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "step,q_0,q_1,log_target,accepted");
        assert_eq!(lines.len(), 11);
    }
}
