//! Random-walk MH against the analytic posterior, for validation and cost
//! comparison.

use std::path::Path;
use std::time::{Duration, Instant};

use serde::Serialize;

use super::bundle::{csv_bytes, fmt, BundleWriter};
use super::config::{ExperimentConfig, McmcTarget};
use super::data::{base_manifest, Dataset};
use super::infer::fit;
use crate::error::Result;
use crate::inference::{run_pipeline, Prior};
use crate::mcmc::{chain_diagnostics, rw_mh, tune_proposal, Chain, ChainDiagnostics, ForwardModelTarget, LinearGaussianTarget};

/// Feature count from which MH is not expected to converge in the step
/// budget.
pub const MH_FEATURE_LIMIT: usize = 50;

pub fn budget_warning(m: usize, steps: usize) -> Option<String> {
    (m >= MH_FEATURE_LIMIT).then(|| {
        format!("MH over {m} features rarely converges within {steps} steps; expect split-R̂ above 1.05 and long runtimes")
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub coordinate: usize,
    pub analytic_mean: f64,
    pub analytic_std: f64,
    pub mh_mean: f64,
    pub mh_std: f64,
    /// Monte Carlo standard error of `mh_mean`, `mh_std / √ESS`.
    pub mc_se: f64,
}

impl ComparisonRow {
    /// `|mh_mean − analytic_mean|` in Monte Carlo standard errors.
    pub fn mean_error_in_se(&self) -> f64 {
        (self.mh_mean - self.analytic_mean).abs() / self.mc_se
    }

    pub fn std_ratio(&self) -> f64 {
        self.mh_std / self.analytic_std
    }
}

pub struct McmcOutcome {
    pub rows: Vec<ComparisonRow>,
    pub diagnostics: ChainDiagnostics,
    pub chain: Chain<f64>,
    pub proposal_scale: f64,
    pub acceptance: f64,
    /// Log-target evaluations, tuning included.
    pub evaluations: usize,
    /// Forward-model solves used by the adjoint route (one per observation).
    pub adjoint_solves: usize,
    /// Median of three adjoint pipeline runs.
    pub adjoint_time: Duration,
    pub mh_time: Duration,
    pub warning: Option<String>,
}

fn median_time(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<Duration> {
    let mut t = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let s = Instant::now();
        f()?;
        t.push(s.elapsed());
    }
    t.sort();
    Ok(t[t.len() / 2])
}

/// Tune, run one chain from the prior mean, and compare it with the
/// analytic posterior.
pub fn run_mcmc(cfg: &ExperimentConfig, data: &Dataset) -> Result<McmcOutcome> {
    let f = fit(cfg, data)?;
    let m = f.basis.len();
    let warning = budget_warning(m, cfg.mcmc.steps);
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    let prior = Prior::standard(m);
    let adjoint_time = median_time(3, || run_pipeline(&data.system, &data.train, &f.basis, &prior).map(|_| ()))?;
    let post = &f.output.posterior;

    let linear = LinearGaussianTarget::new(f.output.phi.clone(), data.train.readings(), data.train.sigma(), &prior)?;
    let forward = ForwardModelTarget {
        system: &data.system,
        basis: &f.output.basis_matrix,
        windows: data.train.windows(),
        z: data.train.readings(),
        sigma: data.train.sigma(),
    };
    let target = |q: &[f64]| match cfg.mcmc.target {
        McmcTarget::Linear => linear.log_density(q),
        McmcTarget::Forward => forward.log_density(q),
    };

    let start = Instant::now();
    let init = vec![0.0; m];
    let base = cfg.mcmc.chain_config(m, 1.0, cfg.seeds.mcmc)?;
    let (scale, acceptance_tuned, state, tune_evals) = match cfg.mcmc.proposal_scale {
        Some(s) => (s, f64::NAN, init, 0),
        None => {
            let t = tune_proposal(target, &init, base.batch_size, cfg.seeds.mcmc, cfg.mcmc.pre_run)?;
            log::info!("tuned proposal scale {:.4} at acceptance {:.3}", t.proposal_scale, t.acceptance);
            (t.proposal_scale, t.acceptance, t.state, t.evaluations)
        }
    };
    let ccfg = cfg.mcmc.chain_config(m, scale, cfg.seeds.mcmc)?;
    let chain = rw_mh(target, &state, &ccfg)?;
    let mh_time = start.elapsed();
    log::debug!("tuning acceptance {acceptance_tuned:.3}");

    let diagnostics = chain_diagnostics(std::slice::from_ref(&chain));
    let means = chain.means();
    let stds = chain.std_devs();
    let astd = post.std_devs();
    let rows = (0..m)
        .map(|c| ComparisonRow {
            coordinate: c,
            analytic_mean: post.mean()[c],
            analytic_std: astd[c],
            mh_mean: means[c],
            mh_std: stds[c],
            mc_se: stds[c] / diagnostics.ess[c].max(1.0).sqrt(),
        })
        .collect();
    Ok(McmcOutcome {
        rows,
        diagnostics,
        proposal_scale: scale,
        acceptance: chain.acceptance_rate(),
        evaluations: chain.evaluations + tune_evals,
        adjoint_solves: data.train.len(),
        adjoint_time,
        mh_time,
        warning,
        chain,
    })
}

/// [`run_mcmc`] plus `comparison.csv`, `trace.csv`, `diagnostics.csv`,
/// `cost.csv`, and a manifest.
pub fn mcmc(cfg: &ExperimentConfig, data: &Dataset, out: &Path) -> Result<McmcOutcome> {
    let o = run_mcmc(cfg, data)?;
    let mut w = BundleWriter::create(out)?;
    w.write(
        "comparison.csv",
        &csv_bytes(
            &["coordinate", "analytic_mean", "mh_mean", "analytic_std", "mh_std", "mc_se"],
            o.rows.iter().map(|r| {
                vec![
                    r.coordinate.to_string(),
                    fmt(r.analytic_mean),
                    fmt(r.mh_mean),
                    fmt(r.analytic_std),
                    fmt(r.mh_std),
                    fmt(r.mc_se),
                ]
            }),
        )?,
    )?;
    w.write_with("trace.csv", |b| o.chain.write_csv(b))?;
    let d = &o.diagnostics;
    w.write(
        "diagnostics.csv",
        &csv_bytes(
            &["coordinate", "ess", "split_rhat", "degenerate"],
            (0..d.ess.len()).map(|c| vec![c.to_string(), fmt(d.ess[c]), fmt(d.rhat[c]), d.degenerate[c].to_string()]),
        )?,
    )?;
    w.write(
        "cost.csv",
        &csv_bytes(
            &["method", "seconds", "forward_model_evaluations"],
            [
                vec!["adjoint".into(), fmt(o.adjoint_time.as_secs_f64()), o.adjoint_solves.to_string()],
                vec!["mh".into(), fmt(o.mh_time.as_secs_f64()), o.evaluations.to_string()],
            ],
        )?,
    )?;
    let mut man = base_manifest(cfg, "mcmc", &data.system);
    man.details.insert("proposal_scale".into(), o.proposal_scale.into());
    man.details.insert("acceptance".into(), o.acceptance.into());
    man.details.insert("max_split_rhat".into(), d.max_rhat().into());
    man.details.insert("converged".into(), d.converged().into());
    man.details.insert("steps".into(), cfg.mcmc.steps.into());
    if let Some(msg) = &o.warning {
        man.details.insert("warning".into(), msg.clone().into());
    }
    man.details.insert("nondeterministic_files".into(), vec!["cost.csv"].into());
    w.finish(man)?;
    Ok(o)
}
