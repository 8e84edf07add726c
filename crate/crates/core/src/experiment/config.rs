//! Experiment configuration, read from TOML. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::KernelParams;
use crate::fields::Grid;
use crate::mcmc::ChainConfig;
use crate::ode::{OdeParams, OdeSystem};
use crate::pde::{PdeParams, PdeSystem};
use crate::shift::{ShiftParams, ShiftSystem};
use crate::system::LinearSystem;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SystemConfig {
    /// `p₂u'' + p₁u' + p₀u = f` on `[0, t_end]`.
    Ode { p0: f64, p1: f64, p2: f64, t_end: f64 },
    /// Advection–diffusion on `[lower, upper] × [0, t_end]`.
    Pde {
        velocity: [f64; 2],
        diffusivity: f64,
        #[serde(default = "origin2")]
        lower: [f64; 2],
        upper: [f64; 2],
        t_end: f64,
    },
    /// `u(t + shift) = f(t)` on `[0, t_end]`.
    Shift { shift: f64, t_end: f64 },
}

fn origin2() -> [f64; 2] {
    [0.0, 0.0]
}

impl SystemConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            SystemConfig::Ode { .. } => "ode",
            SystemConfig::Pde { .. } => "pde",
            SystemConfig::Shift { .. } => "shift",
        }
    }

    pub fn t_end(&self) -> f64 {
        match *self {
            SystemConfig::Ode { t_end, .. } | SystemConfig::Pde { t_end, .. } | SystemConfig::Shift { t_end, .. } => t_end,
        }
    }

    pub fn ndim(&self) -> usize {
        match self {
            SystemConfig::Pde { .. } => 3,
            _ => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// `[n]` for 1-D systems, `[nt, ny, nx]` for the PDE.
    pub cells: Vec<usize>,
}

/// A single lengthscale; per-axis lengthscales parse but are refused.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Lengthscale {
    Isotropic(f64),
    PerAxis(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub lengthscale: Lengthscale,
    pub variance: f64,
}

impl KernelConfig {
    pub fn params(&self) -> Result<KernelParams<f64>> {
        match &self.lengthscale {
            Lengthscale::Isotropic(l) => KernelParams::new(*l, self.variance).map_err(|e| e.context("[kernel]")),
            Lengthscale::PerAxis(_) => Err(Error::Config("[kernel] lengthscale: anisotropic lengthscales are not supported".into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    pub features: usize,
}

/// Ground-truth forcing: a draw from a large feature basis standing in for
/// the full GP. Kernel parameters default to `[kernel]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    #[serde(default = "default_truth_features")]
    pub features: usize,
    pub lengthscale: Option<f64>,
    pub variance: Option<f64>,
}

fn default_truth_features() -> usize {
    2000
}

impl Default for TruthConfig {
    fn default() -> Self {
        Self {
            features: default_truth_features(),
            lengthscale: None,
            variance: None,
        }
    }
}

/// Where sensors sit and which windows they average over.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "placement", rename_all = "lowercase", deny_unknown_fields)]
pub enum SensorConfig {
    /// 1-D: `count` contiguous windows partitioning `[lo, hi)` (default the
    /// whole horizon).
    Intervals { count: usize, lo: Option<f64>, hi: Option<f64> },
    /// 1-D: `count` single-cell readings evenly spaced over `[lo, hi]`.
    Points { count: usize, lo: f64, hi: f64 },
    /// PDE: `k × k` lattice inset by half a lattice cell.
    Grid {
        k: usize,
        size: [f64; 2],
        time_windows: usize,
        duration: Option<f64>,
    },
    /// PDE: `count` locations drawn uniformly in the box.
    Random {
        count: usize,
        size: [f64; 2],
        time_windows: usize,
        duration: Option<f64>,
    },
    /// Explicit entries: `[lo, hi]` intervals for 1-D systems, `[x, y]`
    /// centres for the PDE.
    List {
        points: Vec<Vec<f64>>,
        size: Option<[f64; 2]>,
        time_windows: Option<usize>,
        duration: Option<f64>,
    },
}

impl SensorConfig {
    /// Human-readable placement rule for manifests.
    pub fn rule(&self) -> String {
        match self {
            SensorConfig::Intervals { count, .. } => format!("intervals({count})"),
            SensorConfig::Points { count, .. } => format!("points({count})"),
            SensorConfig::Grid { k, time_windows, .. } => format!("grid({k}) x {time_windows} time windows, lattice inset by half a cell"),
            SensorConfig::Random { count, time_windows, .. } => format!("random({count}) x {time_windows} time windows"),
            SensorConfig::List { points, .. } => format!("list({})", points.len()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Standard deviation of the additive Gaussian noise.
    pub sigma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub data: u64,
    pub basis: u64,
    pub noise: u64,
    pub mcmc: u64,
    pub predictive: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            data: 1,
            basis: 2,
            noise: 3,
            mcmc: 4,
            predictive: 5,
        }
    }
}

impl Seeds {
    /// Derive every seed from one base value.
    pub fn from_base(base: u64) -> Self {
        Self {
            data: base,
            basis: base.wrapping_add(1),
            noise: base.wrapping_add(2),
            mcmc: base.wrapping_add(3),
            predictive: base.wrapping_add(4),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictiveConfig {
    pub samples: usize,
}

impl Default for PredictiveConfig {
    fn default() -> Self {
        Self {
            samples: crate::inference::DEFAULT_PREDICTIVE_SAMPLES,
        }
    }
}

/// `linear`: Gaussian likelihood through Φ; `forward`: one forward solve per
/// evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum McmcTarget {
    Linear,
    Forward,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcConfig {
    pub steps: usize,
    pub burn_in: usize,
    /// Fixed proposal scale; tuned by pre-runs when absent.
    pub proposal_scale: Option<f64>,
    pub batch_size: Option<usize>,
    pub pre_run: usize,
    pub target: McmcTarget,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            burn_in: 2_000,
            proposal_scale: None,
            batch_size: None,
            pre_run: 1_000,
            target: McmcTarget::Linear,
        }
    }
}

impl McmcConfig {
    pub fn chain_config(&self, m: usize, scale: f64, seed: u64) -> Result<ChainConfig> {
        ChainConfig::new(self.steps, self.burn_in, scale, seed, self.batch_size.unwrap_or(m.clamp(1, 5)))
            .map_err(|e| e.context("[mcmc]"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Total sensor counts; with grid placement each must be a square.
    pub sensors: Vec<usize>,
    pub features: Vec<usize>,
    pub replicates: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanAxis {
    /// `lengthscale`, `variance`, or a system parameter name (`p0`, `p1`,
    /// `p2`, `velocity_x`, `velocity_y`, `diffusivity`).
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub axes: Vec<ScanAxis>,
    pub features: Option<usize>,
    pub samples: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub grid: GridConfig,
    pub kernel: KernelConfig,
    pub basis: BasisConfig,
    #[serde(default)]
    pub truth: TruthConfig,
    pub sensors: SensorConfig,
    pub heldout: Option<SensorConfig>,
    pub noise: NoiseConfig,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub predictive: PredictiveConfig,
    #[serde(default)]
    pub mcmc: McmcConfig,
    pub sweep: Option<SweepConfig>,
    pub scan: Option<ScanConfig>,
    pub output: Option<String>,
}

/// Any of the three systems behind one type.
#[derive(Clone, Debug)]
pub enum SystemHandle {
    Ode(OdeSystem<f64>),
    Pde(PdeSystem<f64>),
    Shift(ShiftSystem<f64>),
}

impl LinearSystem<f64> for SystemHandle {
    fn grid(&self) -> &Grid<f64> {
        match self {
            SystemHandle::Ode(s) => s.grid(),
            SystemHandle::Pde(s) => s.grid(),
            SystemHandle::Shift(s) => s.grid(),
        }
    }

    fn forward(&self, f: &crate::fields::Field<f64>) -> Result<crate::fields::Field<f64>> {
        match self {
            SystemHandle::Ode(s) => s.forward(f),
            SystemHandle::Pde(s) => s.forward(f),
            SystemHandle::Shift(s) => s.forward(f),
        }
    }

    fn adjoint(&self, h: &crate::fields::Field<f64>) -> Result<crate::fields::Field<f64>> {
        match self {
            SystemHandle::Ode(s) => s.adjoint(h),
            SystemHandle::Pde(s) => s.adjoint(h),
            SystemHandle::Shift(s) => s.adjoint(h),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            SystemHandle::Ode(s) => s.name(),
            SystemHandle::Pde(s) => s.name(),
            SystemHandle::Shift(s) => s.name(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| e.context(format!("in {}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Field-level checks; also builds the system so solver preconditions
    /// (such as the stability bound) surface as configuration errors.
    pub fn validate(&self) -> Result<()> {
        let nd = self.system.ndim();
        let want = if nd == 3 { 3 } else { 1 };
        if self.grid.cells.len() != want {
            return Err(Error::Config(format!(
                "[grid] cells: a {} system needs {want} entries, got {}",
                self.system.kind(),
                self.grid.cells.len()
            )));
        }
        self.kernel.params()?;
        if self.basis.features == 0 {
            return Err(Error::Config("[basis] features must be at least 1".into()));
        }
        if self.truth.features == 0 {
            return Err(Error::Config("[truth] features must be at least 1".into()));
        }
        self.truth_kernel()?;
        if !(self.noise.sigma >= 0.0) || !self.noise.sigma.is_finite() {
            return Err(Error::Config("[noise] sigma must be a non-negative number".into()));
        }
        if self.predictive.samples == 0 {
            return Err(Error::Config("[predictive] samples must be at least 1".into()));
        }
        if self.mcmc.burn_in >= self.mcmc.steps {
            return Err(Error::Config("[mcmc] burn_in must be smaller than steps".into()));
        }
        check_sensors(&self.sensors, nd, "[sensors]")?;
        if let Some(h) = &self.heldout {
            check_sensors(h, nd, "[heldout]")?;
        }
        if let Some(s) = &self.sweep {
            if s.sensors.is_empty() || s.features.is_empty() || s.replicates == 0 {
                return Err(Error::Config("[sweep] needs sensors, features, and replicates".into()));
            }
            if s.features.contains(&0) || s.sensors.contains(&0) {
                return Err(Error::Config("[sweep] counts must be positive".into()));
            }
            if matches!(self.sensors, SensorConfig::Grid { .. }) {
                if let Some(c) = s.sensors.iter().find(|&&c| !is_square(c)) {
                    return Err(Error::Config(format!("[sweep] sensors: {c} is not a square, grid placement needs k²")));
                }
            }
        }
        if let Some(s) = &self.scan {
            if s.axes.is_empty() {
                return Err(Error::Config("[scan] needs at least one axis".into()));
            }
            for a in &s.axes {
                if !SCAN_NAMES.contains(&a.name.as_str()) {
                    return Err(Error::Config(format!("[scan] unknown axis '{}'", a.name)));
                }
                if a.steps == 0 || !(a.lo <= a.hi) {
                    return Err(Error::Config(format!("[scan] axis '{}' has an empty range", a.name)));
                }
            }
        }
        self.build_system()?;
        Ok(())
    }

    pub fn truth_kernel(&self) -> Result<KernelParams<f64>> {
        let k = self.kernel.params()?;
        KernelParams::new(self.truth.lengthscale.unwrap_or(k.lengthscale), self.truth.variance.unwrap_or(k.variance))
            .map_err(|e| e.context("[truth]"))
    }

    pub fn build_system(&self) -> Result<SystemHandle> {
        build_system(&self.system, &self.grid.cells)
    }
}

pub(crate) const SCAN_NAMES: [&str; 8] = ["lengthscale", "variance", "p0", "p1", "p2", "velocity_x", "velocity_y", "diffusivity"];

fn is_square(c: usize) -> bool {
    let k = (c as f64).sqrt().round() as usize;
    k * k == c
}

fn check_sensors(s: &SensorConfig, nd: usize, section: &str) -> Result<()> {
    let one_d = nd == 1;
    let bad = |msg: &str| Err(Error::Config(format!("{section} {msg}")));
    match s {
        SensorConfig::Intervals { count, .. } | SensorConfig::Points { count, .. } => {
            if !one_d {
                return bad("placement is for 1-D systems; use grid, random, or list");
            }
            if *count == 0 {
                return bad("count must be at least 1");
            }
        }
        SensorConfig::Grid { k, size, time_windows, .. } => {
            if one_d {
                return bad("grid placement needs the PDE system");
            }
            if *k == 0 || *time_windows == 0 || !(size[0] > 0.0 && size[1] > 0.0) {
                return bad("grid needs k ≥ 1, time_windows ≥ 1, and a positive size");
            }
        }
        SensorConfig::Random { count, size, time_windows, .. } => {
            if one_d {
                return bad("random placement needs the PDE system");
            }
            if *count == 0 || *time_windows == 0 || !(size[0] > 0.0 && size[1] > 0.0) {
                return bad("random needs count ≥ 1, time_windows ≥ 1, and a positive size");
            }
        }
        SensorConfig::List { points, size, .. } => {
            if points.is_empty() {
                return bad("list needs at least one entry");
            }
            if points.iter().any(|p| p.len() != 2) {
                return bad("list entries are pairs: [lo, hi] for 1-D, [x, y] for the PDE");
            }
            if !one_d && size.is_none() {
                return bad("list placement on the PDE needs a size");
            }
        }
    }
    Ok(())
}

pub fn build_system(sys: &SystemConfig, cells: &[usize]) -> Result<SystemHandle> {
    let ctx = |e: Error| e.context("[system]");
    Ok(match *sys {
        SystemConfig::Ode { p0, p1, p2, t_end } => {
            let p = OdeParams::new(p0, p1, p2, t_end).map_err(ctx)?;
            SystemHandle::Ode(OdeSystem::new(p, cells[0]).map_err(ctx)?)
        }
        SystemConfig::Pde {
            velocity,
            diffusivity,
            lower,
            upper,
            t_end,
        } => {
            let p = PdeParams::new(velocity, diffusivity, lower, upper, t_end).map_err(ctx)?;
            SystemHandle::Pde(PdeSystem::new(p, cells[0], cells[1], cells[2]).map_err(ctx)?)
        }
        SystemConfig::Shift { shift, t_end } => {
            let grid = Grid::interval(t_end, cells[0]).map_err(ctx)?;
            SystemHandle::Shift(ShiftSystem::new(ShiftParams::new(shift, grid).map_err(ctx)?))
        }
    })
}

/// Copy of `sys` with one named parameter replaced.
pub fn with_parameter(sys: &SystemConfig, name: &str, value: f64) -> Result<SystemConfig> {
    let mut s = sys.clone();
    let ok = match (&mut s, name) {
        (SystemConfig::Ode { p0, .. }, "p0") => {
            *p0 = value;
            true
        }
        (SystemConfig::Ode { p1, .. }, "p1") => {
            *p1 = value;
            true
        }
        (SystemConfig::Ode { p2, .. }, "p2") | (SystemConfig::Pde { diffusivity: p2, .. }, "p2" | "diffusivity") => {
            *p2 = value;
            true
        }
        (SystemConfig::Pde { velocity, .. }, "velocity_x") => {
            velocity[0] = value;
            true
        }
        (SystemConfig::Pde { velocity, .. }, "velocity_y") => {
            velocity[1] = value;
            true
        }
        (SystemConfig::Pde { velocity, .. }, "p1") => {
            *velocity = [value, value];
            true
        }
        _ => false,
    };
    if ok {
        Ok(s)
    } else {
        Err(Error::Config(format!("parameter '{name}' does not apply to a {} system", sys.kind())))
    }
}
