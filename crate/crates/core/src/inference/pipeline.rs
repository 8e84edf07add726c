//! The full adjoint route, from observations to posterior, with per-stage
//! wall-clock timings.

use std::time::{Duration, Instant};

use nalgebra::DVector;
use serde::Serialize;

use super::linear::{assemble_phi_from, gram, misspecification, posterior_from_gram, Misspecification, PhiMatrix, PosteriorQ, Prior};
use super::observations::{adjoint_bank, ObservationSet};
use crate::error::Result;
use crate::features::{eval_basis, BasisMatrix, FeatureBasis};
use crate::fields::Field;
use crate::scalar::Real;
use crate::system::LinearSystem;

/// Wall-clock time of each pipeline stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub adjoint_solves: Duration,
    pub basis_evaluation: Duration,
    pub phi_assembly: Duration,
    pub gram: Duration,
    pub posterior_solve: Duration,
}

impl StageTimings {
    pub fn stages(&self) -> [(&'static str, Duration); 5] {
        [
            ("adjoint_solves", self.adjoint_solves),
            ("basis_evaluation", self.basis_evaluation),
            ("phi_assembly", self.phi_assembly),
            ("gram", self.gram),
            ("posterior_solve", self.posterior_solve),
        ]
    }

    pub fn total(&self) -> Duration {
        self.stages().iter().map(|(_, d)| *d).sum()
    }
}

pub struct PipelineOutput<T: Real> {
    pub adjoints: Vec<Field<T>>,
    pub basis_matrix: BasisMatrix<T>,
    pub phi: PhiMatrix<T>,
    pub posterior: PosteriorQ<T>,
    pub timings: StageTimings,
    pub misspecification: Option<Misspecification>,
}

fn timed<R>(slot: &mut Duration, f: impl FnOnce() -> R) -> R {
    let start = Instant::now();
    let r = f();
    *slot = start.elapsed();
    r
}

/// Adjoint solves, basis evaluation, Φ assembly, `ΦᵀΦ`, posterior solve.
pub fn run_pipeline<T: Real, S: LinearSystem<T> + ?Sized>(
    system: &S,
    data: &ObservationSet<T>,
    basis: &FeatureBasis<T>,
    prior: &Prior<T>,
) -> Result<PipelineOutput<T>> {
    let mut t = StageTimings::default();
    let adjoints = timed(&mut t.adjoint_solves, || adjoint_bank(system, data.windows()))
        .map_err(|e| e.context("stage adjoint_solves"))?;
    let basis_matrix = timed(&mut t.basis_evaluation, || eval_basis(basis, system.grid()))
        .map_err(|e| e.context("stage basis_evaluation"))?;
    let phi = timed(&mut t.phi_assembly, || assemble_phi_from(&adjoints, &basis_matrix, basis.seed(), system.name()))
        .map_err(|e| e.context("stage phi_assembly"))?;
    let (g, ptz) = timed(&mut t.gram, || {
        (gram(&phi), phi.matrix().tr_mul(&DVector::from_column_slice(data.readings())))
    });
    let posterior = timed(&mut t.posterior_solve, || posterior_from_gram(&g, &ptz, data.sigma(), prior))
        .map_err(|e| e.context("stage posterior_solve"))?;
    let diag = misspecification(&phi, data.readings(), data.sigma(), &posterior);
    if let Some(d) = &diag {
        log::warn!("{d}");
    }
    Ok(PipelineOutput {
        adjoints,
        basis_matrix,
        phi,
        posterior,
        timings: t,
        misspecification: diag,
    })
}
