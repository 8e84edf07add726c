//! Second-order linear ODE `p₂u'' + p₁u' + p₀u = f` on `[0, T]` with
//! `u(0) = u'(0) = 0`, and its adjoint `p₂v'' − p₁v' + p₀v = h` with final
//! conditions `v(T) = v'(T) = 0`.
//!
//! Both are integrated with explicit Euler on the first-order system. The
//! forcing of cell `k` drives the step from node `k` to node `k+1`, and the
//! value reported for a cell is the mean of its two end nodes.
//!
//! Under `s = T − t` the adjoint becomes `p₂v_ss + p₁v_s + p₀v = h(T − s)`
//! with zero initial data: the forward problem again. The adjoint solver is
//! therefore the forward stepper run on the time-reversed source.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{Field, Grid};
use crate::scalar::Real;
use crate::system::LinearSystem;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeParams<T> {
    pub p0: T,
    pub p1: T,
    pub p2: T,
    /// Time horizon `T`.
    pub t_end: T,
}

impl<T: Real> OdeParams<T> {
    pub fn new(p0: T, p1: T, p2: T, t_end: T) -> Result<Self> {
        if p2 == T::zero() || !p2.is_finite() {
            return Err(Error::Config("ODE needs p2 ≠ 0".into()));
        }
        if !(t_end > T::zero()) {
            return Err(Error::Config("ODE needs T > 0".into()));
        }
        if !p0.is_finite() || !p1.is_finite() {
            return Err(Error::Config("ODE coefficients must be finite".into()));
        }
        Ok(Self { p0, p1, p2, t_end })
    }

    /// Largest growth factor `|1 + Δt·μ|` of one Euler step over the two
    /// eigenvalues `μ` of the companion matrix `[[0, 1], [−p₀/p₂, −p₁/p₂]]`.
    pub fn euler_amplification(&self, dt: T) -> T {
        let a = self.p1 / self.p2;
        let b = self.p0 / self.p2;
        let disc = a * a - T::of(4.0) * b;
        let half = T::of(0.5);
        if disc >= T::zero() {
            let r = disc.sqrt();
            let mu1 = (-a + r) * half;
            let mu2 = (-a - r) * half;
            (T::one() + dt * mu1).abs().max((T::one() + dt * mu2).abs())
        } else {
            let re = -a * half;
            let im = (-disc).sqrt() * half;
            let x = T::one() + dt * re;
            let y = dt * im;
            (x * x + y * y).sqrt()
        }
    }
}

fn check_grid<T: Real>(params: &OdeParams<T>, grid: &Grid<T>) -> Result<()> {
    if grid.ndim() != 1 {
        return Err(Error::InvalidGrid("ODE grids are one-dimensional".into()));
    }
    let span = grid.upper()[0] - grid.origin()[0];
    let tol = T::of(1e-9) * params.t_end.max(T::one());
    if grid.origin()[0].abs() > tol || (span - params.t_end).abs() > tol {
        return Err(Error::GridMismatch(format!("ODE grid must cover [0, {}]", params.t_end)));
    }
    Ok(())
}

/// Warn when the explicit scheme would amplify errors by more than 10× over
/// the horizon.
fn stability_precheck<T: Real>(params: &OdeParams<T>, grid: &Grid<T>) {
    let dt = grid.spacing()[0];
    let g = params.euler_amplification(dt).as_f64();
    let steps = grid.dims()[0] as f64;
    if g > 1.0 && steps * g.ln() > 10f64.ln() {
        warn!(
            "explicit Euler step dt = {dt} amplifies by {g:.6} per step ({:.3e} over the horizon); refine the grid",
            g.powf(steps)
        );
    }
}

fn euler_march<T: Real>(params: &OdeParams<T>, rhs: &[T], dt: T, solver: &'static str) -> Result<Vec<T>> {
    let half = T::of(0.5);
    let inv_p2 = T::one() / params.p2;
    let (mut u, mut w) = (T::zero(), T::zero());
    let mut out = Vec::with_capacity(rhs.len());
    for (k, &f) in rhs.iter().enumerate() {
        let u_next = u + dt * w;
        let w_next = w + dt * (f - params.p1 * w - params.p0 * u) * inv_p2;
        if !u_next.is_finite() || !w_next.is_finite() {
            return Err(Error::Unstable { solver, step: k });
        }
        out.push((u + u_next) * half);
        u = u_next;
        w = w_next;
    }
    Ok(out)
}

/// Solve `Lu = f`, `u(0) = u'(0) = 0`.
pub fn ode_forward<T: Real>(params: &OdeParams<T>, f: &Field<T>, grid: &Grid<T>) -> Result<Field<T>> {
    check_grid(params, grid)?;
    if f.grid() != grid {
        return Err(Error::GridMismatch("forcing does not live on the solver grid".into()));
    }
    stability_precheck(params, grid);
    let u = euler_march(params, f.values(), grid.spacing()[0], "ode_forward")?;
    Ok(Field::from_parts(grid.clone(), u))
}

/// Solve `L*v = h`, `v(T) = v'(T) = 0`, marching backward from `T`.
pub fn ode_adjoint<T: Real>(params: &OdeParams<T>, h: &Field<T>, grid: &Grid<T>) -> Result<Field<T>> {
    check_grid(params, grid)?;
    if h.grid() != grid {
        return Err(Error::GridMismatch("source does not live on the solver grid".into()));
    }
    stability_precheck(params, grid);
    let reversed: Vec<T> = h.values().iter().rev().copied().collect();
    let mut v = euler_march(params, &reversed, grid.spacing()[0], "ode_adjoint")?;
    v.reverse();
    Ok(Field::from_parts(grid.clone(), v))
}

/// First and second derivatives by finite differences: centred in the
/// interior, second-order one-sided at the two ends.
fn derivatives<T: Real>(u: &[T], h: T) -> (Vec<T>, Vec<T>) {
    let n = u.len();
    let two = T::of(2.0);
    let mut d1 = vec![T::zero(); n];
    let mut d2 = vec![T::zero(); n];
    for k in 1..n - 1 {
        d1[k] = (u[k + 1] - u[k - 1]) / (two * h);
        d2[k] = (u[k + 1] - two * u[k] + u[k - 1]) / (h * h);
    }
    if n >= 4 {
        let (c3, c4, c5) = (T::of(3.0), T::of(4.0), T::of(5.0));
        d1[0] = (-c3 * u[0] + c4 * u[1] - u[2]) / (two * h);
        d1[n - 1] = (c3 * u[n - 1] - c4 * u[n - 2] + u[n - 3]) / (two * h);
        d2[0] = (two * u[0] - c5 * u[1] + c4 * u[2] - u[3]) / (h * h);
        d2[n - 1] = (two * u[n - 1] - c5 * u[n - 2] + c4 * u[n - 3] - u[n - 4]) / (h * h);
    }
    (d1, d2)
}

/// `Lu = p₂u'' + p₁u' + p₀u` evaluated on cell values by finite differences.
/// Independent of the solvers; used to check the bilinear identity.
pub fn apply_operator<T: Real>(params: &OdeParams<T>, u: &Field<T>) -> Field<T> {
    let (d1, d2) = derivatives(u.values(), u.grid().spacing()[0]);
    let values = u
        .values()
        .iter()
        .zip(d1.iter().zip(&d2))
        .map(|(&v, (&a, &b))| params.p2 * b + params.p1 * a + params.p0 * v)
        .collect();
    Field::from_parts(u.grid().clone(), values)
}

/// `L*v = p₂v'' − p₁v' + p₀v` by finite differences.
pub fn apply_adjoint_operator<T: Real>(params: &OdeParams<T>, v: &Field<T>) -> Field<T> {
    let (d1, d2) = derivatives(v.values(), v.grid().spacing()[0]);
    let values = v
        .values()
        .iter()
        .zip(d1.iter().zip(&d2))
        .map(|(&x, (&a, &b))| params.p2 * b - params.p1 * a + params.p0 * x)
        .collect();
    Field::from_parts(v.grid().clone(), values)
}

/// The ODE as a [`LinearSystem`] on a fixed grid.
#[derive(Clone, Debug)]
pub struct OdeSystem<T> {
    pub params: OdeParams<T>,
    grid: Grid<T>,
}

impl<T: Real> OdeSystem<T> {
    pub fn new(params: OdeParams<T>, cells: usize) -> Result<Self> {
        let grid = Grid::interval(params.t_end, cells)?;
        Ok(Self { params, grid })
    }
}

impl<T: Real> LinearSystem<T> for OdeSystem<T> {
    fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    fn forward(&self, f: &Field<T>) -> Result<Field<T>> {
        ode_forward(&self.params, f, &self.grid)
    }

    fn adjoint(&self, h: &Field<T>) -> Result<Field<T>> {
        ode_adjoint(&self.params, h, &self.grid)
    }

    fn name(&self) -> &'static str {
        "ode-euler"
    }
}
