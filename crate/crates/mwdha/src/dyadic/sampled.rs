//! Piecewise-constant functions on the finest mesh of a lattice.
//!
//! All integrals over cubes reduce to finite sums of cell values, so
//! averages and transforms carry no quadrature error beyond rounding.

use super::{DyadicCube, DyadicLattice};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use std::sync::Arc;

/// Values that live in a linear space: scalars, vectors, matrices.
pub trait CellValue: Clone + Send + Sync {
    fn zeros_like(&self) -> Self;
    /// self += c * other
    fn add_scaled(&mut self, other: &Self, c: f64);
    fn scale(&mut self, c: f64);
    /// Squared Euclidean (Frobenius) norm.
    fn sq_norm(&self) -> f64;
}

impl CellValue for f64 {
    fn zeros_like(&self) -> Self {
        0.0
    }
    fn add_scaled(&mut self, other: &Self, c: f64) {
        *self += c * other;
    }
    fn scale(&mut self, c: f64) {
        *self *= c;
    }
    fn sq_norm(&self) -> f64 {
        self * self
    }
}

impl CellValue for Vec<f64> {
    fn zeros_like(&self) -> Self {
        vec![0.0; self.len()]
    }
    fn add_scaled(&mut self, other: &Self, c: f64) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.iter_mut().zip(other) {
            *a += c * b;
        }
    }
    fn scale(&mut self, c: f64) {
        for a in self.iter_mut() {
            *a *= c;
        }
    }
    fn sq_norm(&self) -> f64 {
        self.iter().map(|x| x * x).sum()
    }
}

impl CellValue for Mat {
    fn zeros_like(&self) -> Self {
        Mat::zeros(self.n())
    }
    fn add_scaled(&mut self, other: &Self, c: f64) {
        self.axpy(other, c);
    }
    fn scale(&mut self, c: f64) {
        self.scale_in_place(c);
    }
    fn sq_norm(&self) -> f64 {
        self.data().iter().map(|x| x * x).sum()
    }
}

/// A function constant on each finest-level cell.
#[derive(Debug, Clone)]
pub struct SampledFunction<T: CellValue> {
    lattice: Arc<DyadicLattice>,
    data: Vec<T>,
}

impl<T: CellValue> SampledFunction<T> {
    pub fn new(lattice: Arc<DyadicLattice>, data: Vec<T>) -> Result<Self> {
        if data.len() != lattice.cell_count() {
            return Err(Error::validation(format!(
                "sample vector has {} entries, lattice has {} cells",
                data.len(),
                lattice.cell_count()
            )));
        }
        Ok(SampledFunction { lattice, data })
    }

    /// Sample a function of the cell center.
    pub fn from_fn(lattice: Arc<DyadicLattice>, mut f: impl FnMut(&[f64]) -> T) -> Self {
        let d = lattice.d();
        let data = (0..lattice.cell_count())
            .map(|cell| {
                let c = lattice.cell_center(cell);
                f(&c[..d])
            })
            .collect();
        SampledFunction { lattice, data }
    }

    pub fn constant(lattice: Arc<DyadicLattice>, value: T) -> Self {
        let data = vec![value; lattice.cell_count()];
        SampledFunction { lattice, data }
    }

    pub fn lattice(&self) -> &Arc<DyadicLattice> {
        &self.lattice
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn get(&self, cell: usize) -> &T {
        &self.data[cell]
    }

    /// Average over a cube of this function's own lattice.
    pub fn cube_mean(&self, cube: &DyadicCube) -> T {
        self.cube_mean_in(&self.lattice.clone(), cube)
            .expect("own lattice is mesh-compatible")
    }

    /// Average over a cube addressed in a mesh-compatible lattice
    /// (cube coordinates are lattice-specific, mesh cells are shared).
    pub fn cube_mean_in(&self, lattice: &DyadicLattice, cube: &DyadicCube) -> Result<T> {
        if !self.lattice.same_mesh(lattice) {
            return Err(Error::validation(
                "mismatched lattice handles: sampled mesh differs from cube lattice",
            ));
        }
        let mut acc = self.data[0].zeros_like();
        let mut count = 0usize;
        lattice.for_each_cell(cube, |cell| {
            acc.add_scaled(&self.data[cell], 1.0);
            count += 1;
        });
        acc.scale(1.0 / count as f64);
        Ok(acc)
    }

    /// Averages over every interior cube of a mesh-compatible lattice
    /// (possibly shifted), accumulated bottom-up through children.
    /// Indexed by level then by `cube_level_index`.
    pub fn level_means(&self, lattice: &DyadicLattice) -> Result<Vec<Vec<T>>> {
        if !self.lattice.same_mesh(lattice) {
            return Err(Error::validation(
                "mismatched lattice handles: sampled mesh differs from cube lattice",
            ));
        }
        let lmax = lattice.level_max();
        let mut means: Vec<Vec<T>> = Vec::with_capacity(lmax + 1);
        means.resize(lmax + 1, Vec::new());
        // Level-L cubes are the mesh cells themselves, in index order.
        means[lmax] = self.data.clone();
        let inv = 1.0 / (1 << lattice.d()) as f64;
        for k in (0..lmax).rev() {
            let cubes = lattice.cubes_at_level(k);
            let mut row = Vec::with_capacity(cubes.len());
            for cube in &cubes {
                let mut acc = self.data[0].zeros_like();
                for child in lattice.children(cube) {
                    let ci = lattice.cube_level_index(&child).expect("child interior");
                    acc.add_scaled(&means[k + 1][ci], 1.0);
                }
                acc.scale(inv);
                row.push(acc);
            }
            means[k] = row;
        }
        Ok(means)
    }

    /// Integral of the squared pointwise norm.
    pub fn sq_l2_norm(&self) -> f64 {
        let vol = self.lattice.cell_volume();
        self.data.iter().map(|v| v.sq_norm()).sum::<f64>() * vol
    }

    pub fn map<U: CellValue>(&self, f: impl Fn(&T) -> U) -> SampledFunction<U> {
        SampledFunction {
            lattice: self.lattice.clone(),
            data: self.data.iter().map(f).collect(),
        }
    }
}
