//! The interface shared by every linear system `Lu = f` the inference code
//! can drive.

use crate::error::Result;
use crate::fields::{Field, Grid};
use crate::scalar::Real;

/// A discretised linear operator with a forward solver (`f ↦ u`) and an
/// adjoint solver (`h ↦ v` with `L*v = h`), both on one grid.
///
/// Implementations are immutable, so the `n` adjoint solves of an
/// observation bank can run concurrently.
pub trait LinearSystem<T: Real>: Send + Sync {
    fn grid(&self) -> &Grid<T>;

    /// Solve `Lu = f` with the system's homogeneous initial/boundary data.
    fn forward(&self, f: &Field<T>) -> Result<Field<T>>;

    /// Solve `L*v = h` with the adjoint's final/boundary data.
    fn adjoint(&self, h: &Field<T>) -> Result<Field<T>>;

    /// Short identifier recorded in Φ provenance.
    fn name(&self) -> &'static str;
}
