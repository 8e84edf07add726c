//! Adjoint-aided inference of the forcing term of linear systems.
//!
//! A forcing `f` is given a truncated Gaussian-process prior
//! `f = Σ q_m φ_m` over random Fourier features. Observations are windowed
//! averages of the solution `u` of `Lu = f`; solving one adjoint problem per
//! observation turns the model into Bayesian linear regression over `q`.
//!
//! Numerics are generic over [`Real`] (`f32` or `f64`); the experiment
//! harness works in `f64`.

pub mod error;
pub mod experiment;
pub mod features;
pub mod fields;
pub mod inference;
pub mod mcmc;
pub mod ode;
pub mod pde;
pub mod scalar;
pub mod shift;
pub mod system;

pub use error::{Error, Result};
pub use fields::{inner_product, norm, window_indicator, Field, Grid};
pub use scalar::Real;
pub use system::LinearSystem;

pub type Grid64 = Grid<f64>;
pub type Field64 = Field<f64>;
pub type FeatureBasis64 = features::FeatureBasis<f64>;
pub type PosteriorQ64 = inference::PosteriorQ<f64>;
pub type ObservationSet64 = inference::ObservationSet<f64>;
pub type OdeSystem64 = ode::OdeSystem<f64>;
pub type PdeSystem64 = pde::PdeSystem<f64>;
pub type ShiftSystem64 = shift::ShiftSystem<f64>;

pub type Grid32 = Grid<f32>;
pub type Field32 = Field<f32>;
pub type FeatureBasis32 = features::FeatureBasis<f32>;
pub type PosteriorQ32 = inference::PosteriorQ<f32>;
pub type ObservationSet32 = inference::ObservationSet<f32>;
pub type OdeSystem32 = ode::OdeSystem<f32>;
pub type PdeSystem32 = pde::PdeSystem<f32>;
pub type ShiftSystem32 = shift::ShiftSystem<f32>;
