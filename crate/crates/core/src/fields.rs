//! Uniform grids, fields sampled at cell centres, and the quadrature inner
//! product `⟨a, b⟩ = Σ a_g b_g · |cell|`.
//!
//! Storage is row-major with the first axis slowest. Space-time grids put
//! time first (`[nt, ny, nx]`) so a time step touches one contiguous slab.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{pairwise_dot, Real};

const BINARY_MAGIC: &[u8; 4] = b"AGPF";
const BINARY_VERSION: u32 = 1;

/// A uniform rectangular discretisation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct Grid<T> {
    dims: Vec<usize>,
    spacing: Vec<T>,
    origin: Vec<T>,
}

impl<T: Real> Grid<T> {
    pub fn new(dims: Vec<usize>, spacing: Vec<T>, origin: Vec<T>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidGrid("grid needs at least one axis".into()));
        }
        if spacing.len() != dims.len() || origin.len() != dims.len() {
            return Err(Error::InvalidGrid(format!(
                "{} axes but {} spacings and {} origins",
                dims.len(),
                spacing.len(),
                origin.len()
            )));
        }
        if let Some(a) = dims.iter().position(|&n| n < 2) {
            return Err(Error::InvalidGrid(format!("axis {a} has fewer than 2 cells")));
        }
        if let Some(a) = spacing.iter().position(|&h| !(h > T::zero()) || !h.is_finite()) {
            return Err(Error::InvalidGrid(format!("axis {a} spacing must be positive")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        Ok(Self { dims, spacing, origin })
    }

    /// Grid of `dims` cells covering the box `[lo, hi]`.
    pub fn uniform(lo: &[T], hi: &[T], dims: &[usize]) -> Result<Self> {
        if lo.len() != dims.len() || hi.len() != dims.len() {
            return Err(Error::InvalidGrid("bounds and dims disagree in length".into()));
        }
        let spacing = lo
            .iter()
            .zip(hi)
            .zip(dims)
            .map(|((&l, &h), &n)| (h - l) / T::of_usize(n.max(1)))
            .collect();
        Self::new(dims.to_vec(), spacing, lo.to_vec())
    }

    /// 1-D grid of `n` cells on `[0, t_end]`.
    pub fn interval(t_end: T, n: usize) -> Result<Self> {
        Self::uniform(&[T::zero()], &[t_end], &[n])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn spacing(&self) -> &[T] {
        &self.spacing
    }

    pub fn origin(&self) -> &[T] {
        &self.origin
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    /// Total number of cells `G`.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> T {
        self.spacing.iter().fold(T::one(), |acc, &h| acc * h)
    }

    /// Upper bound of each axis.
    pub fn upper(&self) -> Vec<T> {
        self.origin
            .iter()
            .zip(&self.spacing)
            .zip(&self.dims)
            .map(|((&o, &h), &n)| o + h * T::of_usize(n))
            .collect()
    }

    /// Measure of the whole domain.
    pub fn measure(&self) -> T {
        self.cell_volume() * T::of_usize(self.len())
    }

    #[inline]
    pub fn axis_center(&self, axis: usize, i: usize) -> T {
        self.origin[axis] + (T::of_usize(i) + T::of(0.5)) * self.spacing[axis]
    }

    /// Flat index of a multi-index.
    pub fn flat_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        idx.iter().zip(&self.dims).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    /// Multi-index of a flat index.
    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims.len()];
        for (slot, &n) in idx.iter_mut().zip(&self.dims).rev() {
            *slot = flat % n;
            flat /= n;
        }
        idx
    }

    /// Physical coordinates of the centre of cell `flat`.
    pub fn center(&self, flat: usize) -> Vec<T> {
        let mut x = vec![T::zero(); self.ndim()];
        self.center_into(flat, &mut x);
        x
    }

    pub fn center_into(&self, mut flat: usize, out: &mut [T]) {
        for axis in (0..self.dims.len()).rev() {
            let n = self.dims[axis];
            out[axis] = self.axis_center(axis, flat % n);
            flat /= n;
        }
    }

    /// All cell centres, row-major, `ndim` coordinates per cell.
    pub fn centers(&self) -> Vec<T> {
        let d = self.ndim();
        let mut out = vec![T::zero(); self.len() * d];
        for (g, chunk) in out.chunks_mut(d).enumerate() {
            self.center_into(g, chunk);
        }
        out
    }

    /// Index of the cell whose span `[lo, lo+h)` contains `x` along `axis`, if any.
    pub fn locate(&self, axis: usize, x: T) -> Option<usize> {
        let r = (x - self.origin[axis]) / self.spacing[axis];
        if r < T::zero() {
            return None;
        }
        let i = r.floor().as_f64() as usize;
        (i < self.dims[axis]).then_some(i)
    }

    /// Grid formed by dropping the leading (time) axis.
    pub fn spatial(&self) -> Result<Self> {
        if self.ndim() < 2 {
            return Err(Error::InvalidGrid("grid has no spatial axes".into()));
        }
        Self::new(self.dims[1..].to_vec(), self.spacing[1..].to_vec(), self.origin[1..].to_vec())
    }

    pub fn same_as(&self, other: &Self) -> bool {
        self == other
    }

    pub(crate) fn check_same(&self, other: &Self) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{:?} vs {:?}", self.dims, other.dims)))
        }
    }
}

/// Real values sampled at the cell centres of a [`Grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct Field<T> {
    grid: Grid<T>,
    values: Vec<T>,
}

impl<T: Real> Field<T> {
    pub fn new(grid: Grid<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(g) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite value at cell {g}")));
        }
        Ok(Self { grid, values })
    }

    /// Internal constructor for solver output already checked for finiteness.
    pub(crate) fn from_parts(grid: Grid<T>, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn zeros(grid: &Grid<T>) -> Self {
        Self::constant(grid, T::zero())
    }

    pub fn constant(grid: &Grid<T>, c: T) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![c; grid.len()],
        }
    }

    /// Sample `f` at every cell centre.
    pub fn from_fn(grid: &Grid<T>, mut f: impl FnMut(&[T]) -> T) -> Result<Self> {
        let mut x = vec![T::zero(); grid.ndim()];
        let values = (0..grid.len())
            .map(|g| {
                grid.center_into(g, &mut x);
                f(&x)
            })
            .collect();
        Self::new(grid.clone(), values)
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    /// `alpha·self + beta·other`.
    pub fn combine(&self, alpha: T, other: &Self, beta: T) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Ok(Self {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| alpha * a + beta * b)
                .collect(),
        })
    }

    /// Field with its leading (time) axis reversed.
    pub fn reverse_time(&self) -> Self {
        let nt = self.grid.dims[0];
        let slab = self.grid.len() / nt;
        let mut values = Vec::with_capacity(self.values.len());
        for k in (0..nt).rev() {
            values.extend_from_slice(&self.values[k * slab..(k + 1) * slab]);
        }
        Self {
            grid: self.grid.clone(),
            values,
        }
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Spatial slice at the time cell containing `t`.
    pub fn time_slice(&self, t: T) -> Result<Self> {
        let spatial = self.grid.spatial()?;
        let k = self
            .grid
            .locate(0, t)
            .ok_or_else(|| Error::Domain(format!("t = {t} lies outside the time axis")))?;
        let slab = spatial.len();
        Ok(Self {
            grid: spatial,
            values: self.values[k * slab..(k + 1) * slab].to_vec(),
        })
    }

    /// One row per cell: index coordinates, physical coordinates, value.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let d = self.grid.ndim();
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..d).map(|a| format!("i{a}")).collect();
        header.extend((0..d).map(|a| format!("x{a}")));
        header.push("value".into());
        out.write_record(&header)?;
        let mut x = vec![T::zero(); d];
        for (g, v) in self.values.iter().enumerate() {
            let idx = self.grid.multi_index(g);
            self.grid.center_into(g, &mut x);
            let mut row: Vec<String> = idx.iter().map(|i| i.to_string()).collect();
            row.extend(x.iter().map(|c| format!("{c:e}")));
            row.push(format!("{v:e}"));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Binary dump: `b"AGPF"`, u32 version, u32 ndim, then per axis u64 dims,
    /// f64 spacing, f64 origin, then `G` f64 values; all little-endian.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&BINARY_VERSION.to_le_bytes())?;
        w.write_all(&(self.grid.ndim() as u32).to_le_bytes())?;
        for &n in &self.grid.dims {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        for &h in &self.grid.spacing {
            w.write_all(&h.as_f64().to_le_bytes())?;
        }
        for &o in &self.grid.origin {
            w.write_all(&o.as_f64().to_le_bytes())?;
        }
        for &v in &self.values {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Serde("not a field dump (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != BINARY_VERSION {
            return Err(Error::Serde(format!("unsupported field dump version {version}")));
        }
        let ndim = read_u32(&mut r)? as usize;
        let dims = (0..ndim).map(|_| read_u64(&mut r).map(|n| n as usize)).collect::<Result<Vec<_>>>()?;
        let spacing = (0..ndim).map(|_| read_f64(&mut r).map(T::of)).collect::<Result<Vec<_>>>()?;
        let origin = (0..ndim).map(|_| read_f64(&mut r).map(T::of)).collect::<Result<Vec<_>>>()?;
        let grid = Grid::new(dims, spacing, origin)?;
        let values = (0..grid.len()).map(|_| read_f64(&mut r).map(T::of)).collect::<Result<Vec<_>>>()?;
        Field::new(grid, values)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Midpoint-rule inner product `Σ_g a_g b_g · |cell|`.
pub fn inner_product<T: Real>(a: &Field<T>, b: &Field<T>) -> Result<T> {
    a.grid.check_same(&b.grid)?;
    Ok(pairwise_dot(&a.values, &b.values) * a.grid.cell_volume())
}

/// `‖a‖ = ⟨a, a⟩^{1/2}`.
pub fn norm<T: Real>(a: &Field<T>) -> T {
    (pairwise_dot(&a.values, &a.values) * a.grid.cell_volume()).sqrt()
}

/// Normalised indicator of the window `[lo, hi)`.
///
/// Cells whose centres fall inside the window get `1 / (k·|cell|)` where `k`
/// is the number of such cells, so `⟨h, 1⟩ = 1` and `⟨h, u⟩` is the exact
/// mean of `u` over the selected cells. A window narrower than one cell that
/// misses every centre snaps to the cell containing its midpoint, which makes
/// point observations single-cell spikes.
pub fn window_indicator<T: Real>(grid: &Grid<T>, lo: &[T], hi: &[T]) -> Result<Field<T>> {
    let d = grid.ndim();
    if lo.len() != d || hi.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: lo.len().min(hi.len()),
        });
    }
    if lo.iter().zip(hi).any(|(l, h)| !(l < h)) {
        return Err(Error::Domain("window needs lo < hi on every axis".into()));
    }
    let mut ranges = Vec::with_capacity(d);
    for axis in 0..d {
        let selected: Vec<usize> = (0..grid.dims[axis])
            .filter(|&i| {
                let c = grid.axis_center(axis, i);
                c >= lo[axis] && c < hi[axis]
            })
            .collect();
        let (first, last) = match (selected.first(), selected.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => {
                let mid = (lo[axis] + hi[axis]) * T::of(0.5);
                let i = grid.locate(axis, mid).ok_or_else(|| {
                    Error::Domain(format!(
                        "window [{}, {}) misses the grid on axis {axis}",
                        lo[axis], hi[axis]
                    ))
                })?;
                (i, i)
            }
        };
        ranges.push(first..last + 1);
    }
    let count: usize = ranges.iter().map(|r| r.len()).product();
    let level = T::one() / (T::of_usize(count) * grid.cell_volume());
    let mut values = vec![T::zero(); grid.len()];
    let mut idx: Vec<usize> = ranges.iter().map(|r| r.start).collect();
    'outer: loop {
        values[grid.flat_index(&idx)] = level;
        for axis in (0..d).rev() {
            idx[axis] += 1;
            if idx[axis] < ranges[axis].end {
                continue 'outer;
            }
            idx[axis] = ranges[axis].start;
        }
        break;
    }
    Ok(Field::from_parts(grid.clone(), values))
}
