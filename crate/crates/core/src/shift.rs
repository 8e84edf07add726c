//! Right shift `L_a u(t) = u(t + a)` and its adjoint, the left shift
//! `L*_a v(t) = v(t − a)`, on a 1-D grid.
//!
//! Solving `L_a u = f` gives `u(t) = f(t − a)`; solving `L*_a v = h` gives
//! `v(t) = h(t + a)`. Shifts move whole cells, so cells whose source lies
//! outside the grid carry no value and are masked.

use crate::error::{Error, Result};
use crate::fields::{Field, Grid};
use crate::scalar::{pairwise_sum, Real};
use crate::system::LinearSystem;

#[derive(Clone, Debug)]
pub struct ShiftParams<T> {
    pub shift: T,
    grid: Grid<T>,
    cells: isize,
}

impl<T: Real> ShiftParams<T> {
    /// `shift` must be a whole number of cells and shorter than the grid.
    pub fn new(shift: T, grid: Grid<T>) -> Result<Self> {
        if grid.ndim() != 1 {
            return Err(Error::InvalidGrid("shift operators act on 1-D grids".into()));
        }
        let dt = grid.spacing()[0];
        let ratio = (shift / dt).as_f64();
        let cells = ratio.round();
        if (ratio - cells).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "shift {shift} is not a whole number of cells (dt = {dt})"
            )));
        }
        let cells = cells as isize;
        if cells.unsigned_abs() >= grid.len() {
            return Err(Error::Config(format!("shift {shift} is not shorter than the domain")));
        }
        Ok(Self { shift, grid, cells })
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    /// Shift in cells (negative for a left shift).
    pub fn cells(&self) -> isize {
        self.cells
    }

    /// Mask of cells where `u = f(· − a)` is defined.
    pub fn forward_mask(&self) -> Vec<bool> {
        (0..self.grid.len()).map(|k| self.source_index(k, -self.cells).is_some()).collect()
    }

    fn source_index(&self, k: usize, offset: isize) -> Option<usize> {
        let j = k as isize + offset;
        (j >= 0 && (j as usize) < self.grid.len()).then_some(j as usize)
    }

    fn take(&self, f: &Field<T>, offset: isize) -> Result<MaskedField<T>> {
        if f.grid() != &self.grid {
            return Err(Error::GridMismatch("field is not on the shift grid".into()));
        }
        let n = self.grid.len();
        let mut values = vec![T::zero(); n];
        let mut defined = vec![false; n];
        for k in 0..n {
            if let Some(j) = self.source_index(k, offset) {
                values[k] = f.values()[j];
                defined[k] = true;
            }
        }
        Ok(MaskedField {
            field: Field::from_parts(self.grid.clone(), values),
            defined,
        })
    }
}

/// A field with some cells flagged undefined. Undefined cells hold zero and
/// are skipped by [`masked_inner_product`].
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedField<T> {
    pub field: Field<T>,
    pub defined: Vec<bool>,
}

impl<T: Real> MaskedField<T> {
    pub fn full(field: Field<T>) -> Self {
        let defined = vec![true; field.values().len()];
        Self { field, defined }
    }

    pub fn is_defined(&self, k: usize) -> bool {
        self.defined[k]
    }

    /// Value at cell `k`, `None` where undefined.
    pub fn get(&self, k: usize) -> Option<T> {
        self.defined[k].then(|| self.field.values()[k])
    }

    pub fn defined_count(&self) -> usize {
        self.defined.iter().filter(|&&d| d).count()
    }
}

/// `⟨a, b⟩` over the cells where both are defined.
pub fn masked_inner_product<T: Real>(a: &MaskedField<T>, b: &MaskedField<T>) -> Result<T> {
    a.field.grid().check_same(b.field.grid())?;
    let terms: Vec<T> = (0..a.defined.len())
        .filter(|&k| a.defined[k] && b.defined[k])
        .map(|k| a.field.values()[k] * b.field.values()[k])
        .collect();
    Ok(pairwise_sum(&terms) * a.field.grid().cell_volume())
}

/// Solve `L_a u = f`: `u(t) = f(t − a)`.
pub fn shift_forward<T: Real>(params: &ShiftParams<T>, f: &Field<T>) -> Result<MaskedField<T>> {
    params.take(f, -params.cells)
}

/// Solve `L*_a v = h`: `v(t) = h(t + a)`.
pub fn shift_adjoint<T: Real>(params: &ShiftParams<T>, h: &Field<T>) -> Result<MaskedField<T>> {
    params.take(h, params.cells)
}

/// Apply `L_a`: `(L_a u)(t) = u(t + a)`.
pub fn apply_shift<T: Real>(params: &ShiftParams<T>, u: &Field<T>) -> Result<MaskedField<T>> {
    params.take(u, params.cells)
}

/// Apply `L*_a`: `(L*_a v)(t) = v(t − a)`.
pub fn apply_adjoint_shift<T: Real>(params: &ShiftParams<T>, v: &Field<T>) -> Result<MaskedField<T>> {
    params.take(v, -params.cells)
}

/// The shift pair as a [`LinearSystem`]. Undefined cells are zero-filled,
/// which keeps the two directions exact transposes; observation functionals
/// must therefore be supported where the forward solution is defined.
#[derive(Clone, Debug)]
pub struct ShiftSystem<T> {
    pub params: ShiftParams<T>,
}

impl<T: Real> ShiftSystem<T> {
    pub fn new(params: ShiftParams<T>) -> Self {
        Self { params }
    }
}

impl<T: Real> LinearSystem<T> for ShiftSystem<T> {
    fn grid(&self) -> &Grid<T> {
        &self.params.grid
    }

    fn forward(&self, f: &Field<T>) -> Result<Field<T>> {
        Ok(shift_forward(&self.params, f)?.field)
    }

    fn adjoint(&self, h: &Field<T>) -> Result<Field<T>> {
        let mask = self.params.forward_mask();
        if h.values().iter().zip(&mask).any(|(&v, &d)| !d && v != T::zero()) {
            return Err(Error::Domain(
                "observation window reaches cells where the shifted solution is undefined".into(),
            ));
        }
        Ok(shift_adjoint(&self.params, h)?.field)
    }

    fn name(&self) -> &'static str {
        "shift"
    }
}
