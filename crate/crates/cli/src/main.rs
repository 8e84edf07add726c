use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adjoint_gp::experiment::{self, demo_config, ExperimentConfig, Seeds};
use adjoint_gp::{Error, Result};
use clap::{Args, Parser, Subcommand};

/// Adjoint-aided Gaussian-process inference of forcing terms.
#[derive(Parser, Debug)]
#[command(name = "adjgp", version)]
struct Cli {
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: `output` from the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Derive every seed from this value, overriding `[seeds]`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
struct WithData {
    #[command(flatten)]
    common: Common,
    /// Data bundle from `simulate`; regenerated from the config when absent.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a ground-truth forcing, solve forward, and write noisy readings.
    Simulate(Common),
    /// Posterior over the feature weights and predictive scores.
    Infer {
        #[command(flatten)]
        args: WithData,
        /// Export forcing moments at one time only, as `t=<value>`.
        #[arg(long, value_parser = parse_slice)]
        slice: Option<f64>,
    },
    /// Random-walk Metropolis–Hastings against the analytic posterior.
    Mcmc(WithData),
    /// Predictive MSE over sensor and feature counts with replicates.
    Sweep(Common),
    /// Predictive NLL over a lattice of hyperparameters.
    ScanHyper(WithData),
    /// Inference through a shift operator.
    ShiftDemo {
        /// Configuration; the built-in scenario when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn parse_slice(s: &str) -> std::result::Result<f64, String> {
    let v = s.strip_prefix("t=").ok_or_else(|| format!("expected t=<value>, got '{s}'"))?;
    v.parse().map_err(|_| format!("'{v}' is not a number"))
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seeds = Seeds::from_base(s);
    }
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig, out: Option<PathBuf>) -> Result<PathBuf> {
    out.or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .ok_or_else(|| Error::Config("no output directory: pass --out or set `output` in the config".into()))
}

fn dataset(cfg: &ExperimentConfig, data: Option<&Path>) -> Result<experiment::Dataset> {
    match data {
        Some(d) => experiment::load_bundle(cfg, d),
        None => experiment::generate(cfg),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(c) => {
            let cfg = load(&c.config, c.seed)?;
            let out = out_dir(&cfg, c.out)?;
            let (data, _) = experiment::simulate(&cfg, &out)?;
            println!("wrote {} observations to {}", data.train.len(), out.display());
        }
        Command::Infer { args, slice } => {
            let cfg = load(&args.common.config, args.common.seed)?;
            let out = out_dir(&cfg, args.common.out)?;
            let data = dataset(&cfg, args.data.as_deref())?;
            let (_, rep) = experiment::infer(&cfg, &data, Some(&out), slice)?;
            println!("predictive_mse {:.6e} ({} windows)", rep.predictive.mse, rep.scored_windows);
            println!("predictive_nll {:.6e}", rep.predictive.nll);
            println!("band_coverage {:.4}", rep.band_coverage);
            for (stage, secs) in &rep.timings {
                println!("time {stage} {secs:.6}s");
            }
        }
        Command::Mcmc(args) => {
            let cfg = load(&args.common.config, args.common.seed)?;
            let out = out_dir(&cfg, args.common.out)?;
            let data = dataset(&cfg, args.data.as_deref())?;
            let o = experiment::mcmc(&cfg, &data, &out)?;
            println!("coordinate,analytic_mean,mh_mean,analytic_std,mh_std");
            for r in &o.rows {
                println!("{},{:.4},{:.4},{:.4},{:.4}", r.coordinate, r.analytic_mean, r.mh_mean, r.analytic_std, r.mh_std);
            }
            println!(
                "acceptance {:.3}, max split-R̂ {:.4}, {} evaluations",
                o.acceptance,
                o.diagnostics.max_rhat(),
                o.evaluations
            );
        }
        Command::Sweep(c) => {
            let cfg = load(&c.config, c.seed)?;
            let out = out_dir(&cfg, c.out)?;
            let (_, summary) = experiment::sweep(&cfg, &out)?;
            println!("sensors,features,median_mse,lo95,hi95");
            for s in &summary {
                println!("{},{},{:.4},{:.4},{:.4}", s.sensors, s.features, s.median, s.lo95, s.hi95);
            }
        }
        Command::ScanHyper(args) => {
            let cfg = load(&args.common.config, args.common.seed)?;
            let out = out_dir(&cfg, args.common.out)?;
            let data = dataset(&cfg, args.data.as_deref())?;
            let points = experiment::scan_to(&cfg, &data, &out)?;
            if let Some(best) = points.first() {
                println!("best theta {:?} nll {:.6e}", best.theta, best.nll);
            }
        }
        Command::ShiftDemo { config, out, seed } => {
            let mut cfg = match &config {
                Some(p) => ExperimentConfig::load(p)?,
                None => demo_config(),
            };
            if let Some(s) = seed {
                cfg.seeds = Seeds::from_base(s);
            }
            let out = out_dir(&cfg, out)?;
            let rep = experiment::shift_demo(&cfg, Some(&out))?;
            println!("observation_mse {:.6e} (observation std {:.4})", rep.mse, rep.observation_std);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(k) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build_global() {
            eprintln!("error: cannot start {k} workers: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
