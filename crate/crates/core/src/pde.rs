//! Advection–diffusion `∂u/∂t + p₁·∇u − p₂∇²u = f` on a box `X × [0, T]`
//! with `u(·, 0) = 0` and `∇u·n̂ = 0` on `∂X`, and its adjoint
//! `−∂v/∂t − p₁·∇v − p₂∇²v = h` with `v(·, T) = 0` and
//! `(p₁·n̂)v + p₂∇v·n̂ = 0` on `∂X`.
//!
//! Grids are `[nt, ny, nx]` (time slowest). Both solvers are explicit:
//! forward Euler in time, first-order upwind advection, centred diffusion.
//! The forward problem reflects ghost cells (zero normal gradient). The
//! adjoint is stepped backward from `T`, upwinded against `−p₁`, and written
//! in flux form `∂v/∂s = ∇·(p₁v + p₂∇v) + h`; the Robin condition says the
//! face flux `p₁v + p₂∇v` through the wall vanishes, so boundary faces carry
//! zero flux with the face value taken from the upwind donor cell.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{window_indicator, Field, Grid};
use crate::scalar::Real;
use crate::system::LinearSystem;

/// Safety factor applied to the explicit stability bound.
pub const CFL_SAFETY: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdeParams<T> {
    /// Advection velocity `p₁ = (p₁ₓ, p₁ᵧ)`.
    pub velocity: [T; 2],
    /// Diffusivity `p₂`.
    pub diffusivity: T,
    /// Spatial box `[x_lo, y_lo]`–`[x_hi, y_hi]`.
    pub lower: [T; 2],
    pub upper: [T; 2],
    pub t_end: T,
}

impl<T: Real> PdeParams<T> {
    pub fn new(velocity: [T; 2], diffusivity: T, lower: [T; 2], upper: [T; 2], t_end: T) -> Result<Self> {
        if !(diffusivity > T::zero()) {
            return Err(Error::Config("PDE needs diffusivity p2 > 0".into()));
        }
        if !(upper[0] > lower[0] && upper[1] > lower[1]) {
            return Err(Error::Config("PDE spatial box is degenerate".into()));
        }
        if !(t_end > T::zero()) {
            return Err(Error::Config("PDE needs T > 0".into()));
        }
        if velocity.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("PDE velocity must be finite".into()));
        }
        Ok(Self {
            velocity,
            diffusivity,
            lower,
            upper,
            t_end,
        })
    }

    /// Space-time grid `[nt, ny, nx]` over the box and horizon.
    pub fn grid(&self, nt: usize, ny: usize, nx: usize) -> Result<Grid<T>> {
        Grid::uniform(
            &[T::zero(), self.lower[1], self.lower[0]],
            &[self.t_end, self.upper[1], self.upper[0]],
            &[nt, ny, nx],
        )
    }
}

/// Largest stable time step, `0.9 / (|p₁ₓ|/Δx + |p₁ᵧ|/Δy + 2p₂/Δx² + 2p₂/Δy²)`.
///
/// This is the positivity bound of the explicit upwind/centred update: every
/// new value is then a convex combination of old ones.
pub fn cfl_limit<T: Real>(params: &PdeParams<T>, grid: &Grid<T>) -> T {
    let (dy, dx) = (grid.spacing()[1], grid.spacing()[2]);
    let two = T::of(2.0);
    let rate = params.velocity[0].abs() / dx
        + params.velocity[1].abs() / dy
        + two * params.diffusivity / (dx * dx)
        + two * params.diffusivity / (dy * dy);
    T::of(CFL_SAFETY) / rate
}

fn check_grid<T: Real>(params: &PdeParams<T>, grid: &Grid<T>) -> Result<()> {
    if grid.ndim() != 3 {
        return Err(Error::InvalidGrid("PDE grids are (time, y, x)".into()));
    }
    let up = grid.upper();
    let o = grid.origin();
    let want_lo = [T::zero(), params.lower[1], params.lower[0]];
    let want_hi = [params.t_end, params.upper[1], params.upper[0]];
    for a in 0..3 {
        let tol = T::of(1e-9) * (want_hi[a] - want_lo[a]).abs().max(T::one());
        if (o[a] - want_lo[a]).abs() > tol || (up[a] - want_hi[a]).abs() > tol {
            return Err(Error::GridMismatch(format!("PDE grid axis {a} does not match the domain")));
        }
    }
    let dt = grid.spacing()[0];
    let max_dt = cfl_limit(params, grid);
    if dt > max_dt {
        let min_steps = (params.t_end / max_dt).ceil().as_f64() as usize;
        return Err(Error::Cfl {
            dt: dt.as_f64(),
            max_dt: max_dt.as_f64(),
            min_steps,
        });
    }
    Ok(())
}

#[derive(Clone, Copy)]
struct Stencil<T> {
    nx: usize,
    ny: usize,
    dx: T,
    dy: T,
    vx: T,
    vy: T,
    kappa: T,
}

impl<T: Real> Stencil<T> {
    fn new(params: &PdeParams<T>, grid: &Grid<T>) -> Self {
        Self {
            nx: grid.dims()[2],
            ny: grid.dims()[1],
            dx: grid.spacing()[2],
            dy: grid.spacing()[1],
            vx: params.velocity[0],
            vy: params.velocity[1],
            kappa: params.diffusivity,
        }
    }

    /// `out = −p₁·∇u + p₂∇²u` with reflected ghosts (zero normal gradient).
    fn forward_rate(&self, u: &[T], out: &mut [T]) {
        let (nx, ny) = (self.nx, self.ny);
        let two = T::of(2.0);
        let (cx, cy) = (self.kappa / (self.dx * self.dx), self.kappa / (self.dy * self.dy));
        for j in 0..ny {
            let jm = if j == 0 { 0 } else { j - 1 };
            let jp = if j + 1 == ny { j } else { j + 1 };
            for i in 0..nx {
                let im = if i == 0 { 0 } else { i - 1 };
                let ip = if i + 1 == nx { i } else { i + 1 };
                let c = u[j * nx + i];
                let (w, e) = (u[j * nx + im], u[j * nx + ip]);
                let (s, n) = (u[jm * nx + i], u[jp * nx + i]);
                let adv_x = if self.vx > T::zero() { self.vx * (c - w) / self.dx } else { self.vx * (e - c) / self.dx };
                let adv_y = if self.vy > T::zero() { self.vy * (c - s) / self.dy } else { self.vy * (n - c) / self.dy };
                let diff = cx * (e - two * c + w) + cy * (n - two * c + s);
                out[j * nx + i] = diff - adv_x - adv_y;
            }
        }
    }

    /// `out = ∇·(p₁v + p₂∇v)` in flux form with zero flux through the walls.
    /// The advective face value comes from the donor cell upstream of `−p₁`.
    fn adjoint_rate(&self, v: &[T], out: &mut [T]) {
        let (nx, ny) = (self.nx, self.ny);
        let (cx, cy) = (self.kappa / self.dx, self.kappa / self.dy);
        let zero = T::zero();
        let flux_x = |a: T, b: T| {
            // face between a (left) and b (right)
            let donor = if self.vx > zero { b } else { a };
            self.vx * donor + cx * (b - a)
        };
        let flux_y = |a: T, b: T| {
            let donor = if self.vy > zero { b } else { a };
            self.vy * donor + cy * (b - a)
        };
        for j in 0..ny {
            for i in 0..nx {
                let c = v[j * nx + i];
                let east = if i + 1 < nx { flux_x(c, v[j * nx + i + 1]) } else { zero };
                let west = if i > 0 { flux_x(v[j * nx + i - 1], c) } else { zero };
                let north = if j + 1 < ny { flux_y(c, v[(j + 1) * nx + i]) } else { zero };
                let south = if j > 0 { flux_y(v[(j - 1) * nx + i], c) } else { zero };
                out[j * nx + i] = (east - west) / self.dx + (north - south) / self.dy;
            }
        }
    }
}

enum Direction {
    Forward,
    Adjoint,
}

/// March `w^{k+1} = w^k + Δt(rate(w^k) + src_k)` from zero and report cell
/// means `(w^k + w^{k+1})/2`. For the adjoint the source is read in reverse
/// time order and the output is reversed back.
fn march<T: Real>(params: &PdeParams<T>, grid: &Grid<T>, src: &[T], dir: Direction) -> Result<Vec<T>> {
    let st = Stencil::new(params, grid);
    let nt = grid.dims()[0];
    let slab = st.nx * st.ny;
    let dt = grid.spacing()[0];
    let half = T::of(0.5);
    let mut w = vec![T::zero(); slab];
    let mut rate = vec![T::zero(); slab];
    let mut out = vec![T::zero(); grid.len()];
    let solver = match dir {
        Direction::Forward => "pde_forward",
        Direction::Adjoint => "pde_adjoint",
    };
    for step in 0..nt {
        let k = match dir {
            Direction::Forward => step,
            Direction::Adjoint => nt - 1 - step,
        };
        match dir {
            Direction::Forward => st.forward_rate(&w, &mut rate),
            Direction::Adjoint => st.adjoint_rate(&w, &mut rate),
        }
        let s = &src[k * slab..(k + 1) * slab];
        let o = &mut out[k * slab..(k + 1) * slab];
        for c in 0..slab {
            let next = w[c] + dt * (rate[c] + s[c]);
            if !next.is_finite() {
                return Err(Error::Unstable { solver, step });
            }
            o[c] = (w[c] + next) * half;
            w[c] = next;
        }
    }
    Ok(out)
}

/// Solve the forward problem for forcing `f`.
pub fn pde_forward<T: Real>(params: &PdeParams<T>, f: &Field<T>, grid: &Grid<T>) -> Result<Field<T>> {
    check_grid(params, grid)?;
    if f.grid() != grid {
        return Err(Error::GridMismatch("forcing does not live on the solver grid".into()));
    }
    let u = march(params, grid, f.values(), Direction::Forward)?;
    Ok(Field::from_parts(grid.clone(), u))
}

/// Solve the adjoint problem `L*v = h` backward from `T`.
pub fn pde_adjoint<T: Real>(params: &PdeParams<T>, h: &Field<T>, grid: &Grid<T>) -> Result<Field<T>> {
    check_grid(params, grid)?;
    if h.grid() != grid {
        return Err(Error::GridMismatch("source does not live on the solver grid".into()));
    }
    let v = march(params, grid, h.values(), Direction::Adjoint)?;
    Ok(Field::from_parts(grid.clone(), v))
}

/// Observation functional of a sensor averaging over the spatial box
/// `[lo, hi)` (given as `(x, y)`) during `[t0, t1)`.
pub fn sensor_field<T: Real>(grid: &Grid<T>, lo: [T; 2], hi: [T; 2], window: (T, T)) -> Result<Field<T>> {
    if grid.ndim() != 3 {
        return Err(Error::InvalidGrid("sensor fields need a (time, y, x) grid".into()));
    }
    window_indicator(grid, &[window.0, lo[1], lo[0]], &[window.1, hi[1], hi[0]])
}

/// First derivative along `axis` of a 3-axis array: centred inside,
/// second-order one-sided at the ends.
fn d1_axis<T: Real>(grid: &Grid<T>, u: &[T], axis: usize) -> Vec<T> {
    let dims = grid.dims();
    let h = grid.spacing()[axis];
    let stride: usize = dims[axis + 1..].iter().product();
    let n = dims[axis];
    let two = T::of(2.0);
    let (c3, c4) = (T::of(3.0), T::of(4.0));
    let mut out = vec![T::zero(); u.len()];
    for (g, o) in out.iter_mut().enumerate() {
        let i = (g / stride) % n;
        let at = |k: usize| u[g - i * stride + k * stride];
        *o = if i == 0 {
            (-c3 * at(0) + c4 * at(1) - at(2)) / (two * h)
        } else if i + 1 == n {
            (c3 * at(n - 1) - c4 * at(n - 2) + at(n - 3)) / (two * h)
        } else {
            (at(i + 1) - at(i - 1)) / (two * h)
        };
    }
    out
}

fn d2_axis<T: Real>(grid: &Grid<T>, u: &[T], axis: usize) -> Vec<T> {
    let dims = grid.dims();
    let h = grid.spacing()[axis];
    let stride: usize = dims[axis + 1..].iter().product();
    let n = dims[axis];
    let two = T::of(2.0);
    let (c4, c5) = (T::of(4.0), T::of(5.0));
    let mut out = vec![T::zero(); u.len()];
    for (g, o) in out.iter_mut().enumerate() {
        let i = (g / stride) % n;
        let at = |k: usize| u[g - i * stride + k * stride];
        *o = if i == 0 {
            (two * at(0) - c5 * at(1) + c4 * at(2) - at(3)) / (h * h)
        } else if i + 1 == n {
            (two * at(n - 1) - c5 * at(n - 2) + c4 * at(n - 3) - at(n - 4)) / (h * h)
        } else {
            (at(i + 1) - two * at(i) + at(i - 1)) / (h * h)
        };
    }
    out
}

fn apply_with_sign<T: Real>(params: &PdeParams<T>, u: &Field<T>, sign: T) -> Field<T> {
    let g = u.grid();
    let v = u.values();
    let ut = d1_axis(g, v, 0);
    let uy = d1_axis(g, v, 1);
    let ux = d1_axis(g, v, 2);
    let uyy = d2_axis(g, v, 1);
    let uxx = d2_axis(g, v, 2);
    let [vx, vy] = params.velocity;
    let values = (0..v.len())
        .map(|c| sign * (ut[c] + vx * ux[c] + vy * uy[c]) - params.diffusivity * (uxx[c] + uyy[c]))
        .collect();
    Field::from_parts(g.clone(), values)
}

/// `Lu` by finite differences on cell values, independent of the solvers.
pub fn apply_operator<T: Real>(params: &PdeParams<T>, u: &Field<T>) -> Field<T> {
    apply_with_sign(params, u, T::one())
}

/// `L*v = −∂v/∂t − p₁·∇v − p₂∇²v` by finite differences.
pub fn apply_adjoint_operator<T: Real>(params: &PdeParams<T>, v: &Field<T>) -> Field<T> {
    apply_with_sign(params, v, -T::one())
}

/// The advection–diffusion problem as a [`LinearSystem`] on a fixed grid.
#[derive(Clone, Debug)]
pub struct PdeSystem<T> {
    pub params: PdeParams<T>,
    grid: Grid<T>,
}

impl<T: Real> PdeSystem<T> {
    /// Validates the grid, including the stability bound.
    pub fn new(params: PdeParams<T>, nt: usize, ny: usize, nx: usize) -> Result<Self> {
        let grid = params.grid(nt, ny, nx)?;
        check_grid(&params, &grid)?;
        Ok(Self { params, grid })
    }
}

impl<T: Real> LinearSystem<T> for PdeSystem<T> {
    fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    fn forward(&self, f: &Field<T>) -> Result<Field<T>> {
        pde_forward(&self.params, f, &self.grid)
    }

    fn adjoint(&self, h: &Field<T>) -> Result<Field<T>> {
        pde_adjoint(&self.params, h, &self.grid)
    }

    fn name(&self) -> &'static str {
        "pde-upwind-ftcs"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{forcing_from_weights, sample_basis, standard_normals, KernelParams};
    use crate::fields::{inner_product, norm};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn standard_params() -> PdeParams<f64> {
        PdeParams::new([0.4, 0.4], 0.01, [0.0, 0.0], [10.0, 10.0], 10.0).unwrap()
    }

    fn smooth(grid: &Grid<f64>, seed: u64) -> Field<f64> {
        let basis = sample_basis(60, 3, KernelParams::new(2.0, 2.0).unwrap(), seed).unwrap();
        forcing_from_weights(&basis, &standard_normals(60, seed ^ 0x5eed), grid).unwrap()
    }

    fn spatial_integral(u: &Field<f64>, k: usize) -> f64 {
        let g = u.grid();
        let slab = g.dims()[1] * g.dims()[2];
        u.values()[k * slab..(k + 1) * slab].iter().sum::<f64>() * g.spacing()[1] * g.spacing()[2]
    }

    #[test]
    fn zero_in_zero_out() {
        let p = standard_params();
        let g = p.grid(50, 30, 30).unwrap();
        assert!(pde_forward(&p, &Field::zeros(&g), &g).unwrap().values().iter().all(|&v| v == 0.0));
        assert!(pde_adjoint(&p, &Field::zeros(&g), &g).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cfl_formula() {
        let p: PdeParams<f64> = PdeParams::new([0.0, 0.0], 0.01, [0.0, 0.0], [10.0, 10.0], 10.0).unwrap();
        let g = p.grid(50, 30, 30).unwrap();
        let dx: f64 = 10.0 / 30.0;
        assert!((cfl_limit(&p, &g) - 0.9 * dx * dx / (4.0 * 0.01)).abs() < 1e-12);
        let p2 = PdeParams { diffusivity: 0.02, ..p };
        assert!((cfl_limit(&p2, &g) - 0.5 * cfl_limit(&p, &g)).abs() < 1e-12);
        let adv: PdeParams<f64> = PdeParams::new([0.4, 0.0], 1e-12, [0.0, 0.0], [10.0, 10.0], 10.0).unwrap();
        assert!((cfl_limit(&adv, &g) - 0.9 * dx / 0.4).abs() < 1e-6);
    }

    #[test]
    fn cfl_limit_agrees_with_blow_up() {
        // Run-and-observe oracle on the (p₁ = (0.4, 0.4), p₂ = 0.01) problem.
        let p = standard_params();
        let blows_up = |nt: usize| {
            let g = p.grid(nt, 30, 30).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let f = Field::new(g.clone(), (0..g.len()).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap();
            match march(&p, &g, f.values(), Direction::Forward) {
                Err(_) => true,
                Ok(u) => u.iter().any(|v| v.abs() > 1e3),
            }
        };
        for nt in [5, 10, 20, 30, 50, 100] {
            let g = p.grid(nt, 30, 30).unwrap();
            let admissible = g.spacing()[0] <= cfl_limit(&p, &g);
            assert_eq!(PdeSystem::new(p, nt, 30, 30).is_ok(), admissible);
            if admissible {
                assert!(!blows_up(nt), "nt = {nt} is admissible but diverged");
            }
        }
        let g50 = p.grid(50, 30, 30).unwrap();
        assert!(g50.spacing()[0] <= cfl_limit(&p, &g50));
        // far outside the bound the scheme does diverge
        assert!(blows_up(5));
        match PdeSystem::new(p, 5, 30, 30) {
            Err(Error::Cfl { max_dt, min_steps, .. }) => {
                assert!((max_dt - cfl_limit(&p, &p.grid(5, 30, 30).unwrap())).abs() < 1e-12);
                assert!(min_steps as f64 * max_dt >= 10.0);
            }
            other => panic!("expected CFL error, got {other:?}"),
        }
    }

    #[test]
    fn spatial_operators_are_exact_transposes() {
        let p = PdeParams::new([0.3, -0.7], 0.05, [0.0, 0.0], [2.0, 3.0], 1.0).unwrap();
        let g = p.grid(4, 7, 5).unwrap();
        let st = Stencil::new(&p, &g);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u: Vec<f64> = (0..35).map(|_| rng.random::<f64>() - 0.5).collect();
        let v: Vec<f64> = (0..35).map(|_| rng.random::<f64>() - 0.5).collect();
        let (mut au, mut av) = (vec![0.0; 35], vec![0.0; 35]);
        st.forward_rate(&u, &mut au);
        st.adjoint_rate(&v, &mut av);
        let lhs: f64 = au.iter().zip(&v).map(|(a, b)| a * b).sum();
        let rhs: f64 = u.iter().zip(&av).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn pure_diffusion_conserves_mass() {
        let p = PdeParams::new([0.0, 0.0], 0.05, [0.0, 0.0], [10.0, 10.0], 10.0).unwrap();
        let g = p.grid(50, 30, 30).unwrap();
        let mut f = vec![0.0; g.len()];
        f[g.flat_index(&[0, 7, 21])] = 100.0;
        let u = pde_forward(&p, &Field::new(g.clone(), f).unwrap(), &g).unwrap();
        let m0 = spatial_integral(&u, 1);
        assert!(m0 > 0.0);
        for k in 2..50 {
            assert!((spatial_integral(&u, k) - m0).abs() <= 1e-6 * m0);
        }
    }

    #[test]
    fn maximum_principle() {
        let p = standard_params();
        let g = p.grid(50, 30, 30).unwrap();
        let mut f = vec![0.0; g.len()];
        for (j, i) in [(10, 10), (10, 11), (11, 10), (11, 11)] {
            f[g.flat_index(&[0, j, i])] = 5.0;
        }
        let u = pde_forward(&p, &Field::new(g.clone(), f).unwrap(), &g).unwrap();
        let slab = 900;
        let peak = u.values()[slab..2 * slab].iter().cloned().fold(0.0, f64::max);
        for &v in &u.values()[slab..] {
            assert!(v >= -1e-10 && v <= peak + 1e-10);
        }
    }

    #[test]
    fn blob_translates_with_the_wind() {
        let p = PdeParams::new([0.4, 0.2], 1e-6, [0.0, 0.0], [10.0, 10.0], 5.0).unwrap();
        let g = p.grid(50, 100, 100).unwrap();
        let slab = 100 * 100;
        let dt = g.spacing()[0];
        let mut f = vec![0.0; g.len()];
        for c in 0..slab {
            let x: Vec<f64> = g.center(c);
            let r2 = (x[2] - 3.0).powi(2) + (x[1] - 3.0).powi(2);
            f[c] = (-r2 / (2.0 * 0.5 * 0.5)).exp() / dt;
        }
        let u = pde_forward(&p, &Field::new(g.clone(), f).unwrap(), &g).unwrap();
        let centroid = |k: usize| {
            let s = &u.values()[k * slab..(k + 1) * slab];
            let mass: f64 = s.iter().sum();
            let mut cx = 0.0;
            let mut cy = 0.0;
            for (c, &v) in s.iter().enumerate() {
                let x = g.center(c);
                cx += v * x[2];
                cy += v * x[1];
            }
            (cx / mass, cy / mass)
        };
        let (x0, y0) = centroid(1);
        let (x1, y1) = centroid(26);
        let (ex, ey) = (0.4 * 25.0 * dt, 0.2 * 25.0 * dt);
        assert!(((x1 - x0) - ex).abs() <= 0.05 * ex, "{} vs {ex}", x1 - x0);
        assert!(((y1 - y0) - ey).abs() <= 0.05 * ey, "{} vs {ey}", y1 - y0);
    }

    #[test]
    fn forward_is_linear() {
        let p = standard_params();
        let g = p.grid(20, 12, 12).unwrap();
        let (f1, f2) = (smooth(&g, 1), smooth(&g, 2));
        let lhs = pde_forward(&p, &f1.combine(1.5, &f2, -2.0).unwrap(), &g).unwrap();
        let rhs = pde_forward(&p, &f1, &g)
            .unwrap()
            .combine(1.5, &pde_forward(&p, &f2, &g).unwrap(), -2.0)
            .unwrap();
        for (a, b) in lhs.values().iter().zip(rhs.values()) {
            assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
        }
    }

    fn identity_residual(p: &PdeParams<f64>, n: usize, seed: u64) -> f64 {
        let g = p.grid(n, n, n).unwrap();
        let u = pde_forward(p, &smooth(&g, seed), &g).unwrap();
        let v = pde_adjoint(p, &smooth(&g, seed + 50), &g).unwrap();
        let lhs = inner_product(&apply_operator(p, &u), &v).unwrap();
        let rhs = inner_product(&u, &apply_adjoint_operator(p, &v)).unwrap();
        (lhs - rhs).abs() / lhs.abs().max(rhs.abs())
    }

    #[test]
    fn bilinear_identity_on_a_coarse_grid() {
        // The wall layer of the adjoint has width p₂/|p₁|; keep it resolved
        // so the finite-difference check measures the solvers, not the layer.
        for (p2, t) in [(0.5, 1.0), (0.1, 2.0)] {
            let p = PdeParams::new([0.4, 0.4], p2, [0.0, 0.0], [10.0, 10.0], t).unwrap();
            let coarse = identity_residual(&p, 20, 7);
            let fine = identity_residual(&p, 40, 7);
            assert!(coarse <= 0.05, "{coarse}");
            assert!((coarse / fine).log2() >= 0.8, "{coarse} → {fine}");
        }
    }

    #[test]
    fn adjoint_observation_equivalence() {
        let p = standard_params();
        let g = p.grid(50, 30, 30).unwrap();
        let f = smooth(&g, 9);
        let u = pde_forward(&p, &f, &g).unwrap();
        let mut worst: f64 = 0.0;
        for (sx, sy, t0) in [(2.0, 2.0, 0.0), (5.0, 5.0, 4.0), (8.0, 3.0, 8.0), (3.0, 7.5, 2.0)] {
            let h = sensor_field(&g, [sx, sy], [sx + 0.5, sy + 0.5], (t0, t0 + 2.0)).unwrap();
            let v = pde_adjoint(&p, &h, &g).unwrap();
            let direct = inner_product(&h, &u).unwrap();
            let adj = inner_product(&v, &f).unwrap();
            worst = worst.max((direct - adj).abs() / norm(&u).max(1e-12) * norm(&h).min(1.0));
            assert!((direct - adj).abs() <= 0.05 * direct.abs().max(0.05), "{direct} vs {adj}");
        }
        assert!(worst.is_finite());
    }

    #[test]
    fn adjoint_zero_flux_walls_conserve_total() {
        // With a source only in the first time cell the adjoint total is
        // carried backward unchanged by the zero-flux walls.
        let p = standard_params();
        let g = p.grid(50, 30, 30).unwrap();
        let mut h = vec![0.0; g.len()];
        h[g.flat_index(&[49, 15, 15])] = 1.0;
        let v = pde_adjoint(&p, &Field::new(g.clone(), h).unwrap(), &g).unwrap();
        let m = spatial_integral(&v, 48);
        assert!(m > 0.0);
        for k in 0..48 {
            assert!((spatial_integral(&v, k) - m).abs() <= 1e-9 * m);
        }
    }

    #[test]
    fn sensor_field_single_cell_spike() {
        let p = standard_params();
        let g = p.grid(50, 30, 30).unwrap();
        let h = sensor_field(&g, [1.0, 2.0], [1.01, 2.01], (3.0, 3.01)).unwrap();
        let nz: Vec<f64> = h.values().iter().copied().filter(|&v| v != 0.0).collect();
        assert_eq!(nz.len(), 1);
        assert!((nz[0] - 1.0 / g.cell_volume()).abs() < 1e-9);
        assert!(sensor_field(&g, [11.0, 2.0], [12.0, 3.0], (0.0, 1.0)).is_err());
    }
}
