//! Singular integral operators with kernels of the form k(x, y) A, a
//! scalar Calderon-Zygmund factor times a constant matrix part. The
//! module evaluates kernels pointwise, applies them as principal values
//! on the cell grid, computes Haar coefficient matrices, and builds the
//! dyadic paraproducts and commutators attached to a matrix symbol.
//!
//! Quadrature convention: cell-center sums with the singular cell
//! skipped. For odd kernels the rule is exactly antisymmetric, so the
//! principal-value cancellation is inherited by the discrete sums.

pub mod checks;
pub mod probe;
pub mod t1;

pub use checks::{
    compat_check, compat_check_with_field, haar_decay_check, haar_tilde_coefficient,
    kernel_condition_check, weak_boundedness_check, weak_boundedness_check_with_field,
    CompatReport, DecayBucket, DecayReport, KernelConditionReport, Quantiles, WbpReport,
};
pub use probe::{
    counterexample_growth, counterexample_oracle, empirical_commutator_norm,
    empirical_operator_norm, GrowthRow, GrowthTable, NormProbe, ProbeSample,
};
pub use t1::{compute_t1, default_r_levels, t1_bmo_norm, t1_bmo_norm_with_field, T1Options, T1Output};

use crate::analysis::CubeAddress;
use crate::dyadic::haar::{haar_transform, HaarCoefficients, HaarSignature};
use crate::dyadic::sampled::SampledFunction;
use crate::dyadic::{DyadicCube, DyadicLattice};
use crate::error::{Error, Result};
use crate::linalg::{op_norm, Mat};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

/// Scalar factor of the kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarKernel {
    /// 1/(x - y) on the line.
    Hilbert,
    /// c_d (x_j - y_j) / |x - y|^(d+1), with a 1-based axis j.
    Riesz { axis: usize },
    /// The Hilbert factor plus the source correction 1/y outside [-1, 1].
    ModifiedHilbert,
}

/// Normalization c_d = Gamma((d+1)/2) / pi^((d+1)/2) for the Riesz family.
pub fn riesz_normalization(d: usize) -> f64 {
    match d {
        1 => 1.0 / PI,
        2 => 0.5 / PI,
        _ => 1.0 / (PI * PI),
    }
}

/// A Calderon-Zygmund kernel k(x, y) A with constant matrix part. The
/// built-in scalar factors all have smoothness exponent one. The adjoint
/// swaps the kernel arguments and transposes the matrix part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelDescriptor {
    scalar: ScalarKernel,
    matrix: Mat,
    d: usize,
    alpha: f64,
    riesz_constant: f64,
    adjoint: bool,
}

impl KernelDescriptor {
    pub fn hilbert(matrix: Mat) -> Self {
        KernelDescriptor {
            scalar: ScalarKernel::Hilbert,
            matrix,
            d: 1,
            alpha: 1.0,
            riesz_constant: riesz_normalization(1),
            adjoint: false,
        }
    }

    pub fn modified_hilbert(matrix: Mat) -> Self {
        KernelDescriptor {
            scalar: ScalarKernel::ModifiedHilbert,
            matrix,
            d: 1,
            alpha: 1.0,
            riesz_constant: riesz_normalization(1),
            adjoint: false,
        }
    }

    pub fn riesz(axis: usize, d: usize, matrix: Mat) -> Result<Self> {
        if d == 0 || d > crate::dyadic::MAX_DIMENSION {
            return Err(Error::validation(format!(
                "Riesz kernel dimension {d} outside 1..={}",
                crate::dyadic::MAX_DIMENSION
            )));
        }
        if axis == 0 || axis > d {
            return Err(Error::validation(format!(
                "Riesz axis {axis} outside 1..={d}"
            )));
        }
        Ok(KernelDescriptor {
            scalar: ScalarKernel::Riesz { axis },
            matrix,
            d,
            alpha: 1.0,
            riesz_constant: riesz_normalization(d),
            adjoint: false,
        })
    }

    /// Override the Riesz normalization so oracle comparisons can fix
    /// their own convention.
    pub fn with_riesz_constant(mut self, c: f64) -> Self {
        self.riesz_constant = c;
        self
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.matrix.n()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn matrix(&self) -> &Mat {
        &self.matrix
    }

    pub fn scalar(&self) -> &ScalarKernel {
        &self.scalar
    }

    pub fn riesz_constant(&self) -> f64 {
        self.riesz_constant
    }

    pub fn is_adjoint(&self) -> bool {
        self.adjoint
    }

    /// K*(x, y) = K(y, x)^T.
    pub fn adjoint(&self) -> Self {
        KernelDescriptor {
            scalar: self.scalar.clone(),
            matrix: self.matrix.transpose(),
            d: self.d,
            alpha: self.alpha,
            riesz_constant: self.riesz_constant,
            adjoint: !self.adjoint,
        }
    }

    /// Whether the scalar factor depends on x - y only.
    pub fn is_convolution(&self) -> bool {
        !matches!(self.scalar, ScalarKernel::ModifiedHilbert)
    }

    pub fn label(&self) -> String {
        let base = match &self.scalar {
            ScalarKernel::Hilbert => "hilbert".to_string(),
            ScalarKernel::Riesz { axis } => format!("riesz({axis})"),
            ScalarKernel::ModifiedHilbert => "modified-hilbert".to_string(),
        };
        if self.adjoint {
            format!("{base}*")
        } else {
            base
        }
    }

    /// Scalar factor at (x, y), argument order already adjusted for the
    /// adjoint. Errors on the diagonal x = y.
    pub fn scalar_eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let (x, y) = if self.adjoint { (y, x) } else { (x, y) };
        let pv = self.pv_eval(x, y)?;
        Ok(pv + self.correction_eval(y))
    }

    /// Principal-value part of the scalar factor.
    fn pv_eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let mut dist2 = 0.0;
        for a in 0..self.d {
            let t = x[a] - y[a];
            dist2 += t * t;
        }
        if dist2 == 0.0 {
            return Err(Error::validation(
                "kernel evaluated on the diagonal x = y",
            ));
        }
        Ok(match &self.scalar {
            ScalarKernel::Hilbert | ScalarKernel::ModifiedHilbert => 1.0 / (x[0] - y[0]),
            ScalarKernel::Riesz { axis } => {
                self.riesz_constant * (x[axis - 1] - y[axis - 1])
                    / dist2.powf(0.5 * (self.d as f64 + 1.0))
            }
        })
    }

    /// Bounded source-side correction, zero for the convolution kernels.
    /// `y` is the source argument after any adjoint swap.
    fn correction_eval(&self, y: &[f64]) -> f64 {
        match self.scalar {
            ScalarKernel::ModifiedHilbert if y[0].abs() > 1.0 => 1.0 / y[0],
            _ => 0.0,
        }
    }

    fn check_lattice(&self, lattice: &DyadicLattice) -> Result<()> {
        if self.d != lattice.d() {
            return Err(Error::validation(format!(
                "kernel dimension {} does not match lattice dimension {}",
                self.d,
                lattice.d()
            )));
        }
        Ok(())
    }
}

/// Full matrix kernel at (x, y). Errors on the diagonal.
pub fn kernel_eval(k: &KernelDescriptor, x: &[f64], y: &[f64]) -> Result<Mat> {
    if x.len() != k.d() || y.len() != k.d() {
        return Err(Error::validation(
            "point dimension differs from kernel dimension",
        ));
    }
    Ok(k.matrix.scale(k.scalar_eval(x, y)?))
}

/// Exact integral of 1_{|y|>1} / y over [a, b), via the continuous
/// antiderivative ln|t| outside [-1, 1] and zero inside.
pub(crate) fn halfline_log_integral(a: f64, b: f64) -> f64 {
    let h = |t: f64| if t.abs() > 1.0 { t.abs().ln() } else { 0.0 };
    h(b) - h(a)
}

/// Heuristic quadrature error scale for the cell-center rule, linear in
/// the cell width.
pub fn czo_quadrature_estimate(k: &KernelDescriptor, lattice: &DyadicLattice) -> f64 {
    let h = lattice.unit();
    op_norm(&k.matrix) * h * (1.0 + (lattice.cells_per_axis() as f64).ln())
}

/// Apply the kernel as a principal value on the cell grid: for each
/// target cell the kernel is summed over all other cell centers and the
/// singular cell contributes zero. The modified Hilbert correction is
/// integrated exactly over cells instead of sampled. The quadrature
/// error is of the order of the cell width for the built-in kernels.
pub fn apply_czo(
    k: &KernelDescriptor,
    f: &SampledFunction<Vec<f64>>,
    lattice: &Arc<DyadicLattice>,
) -> Result<SampledFunction<Vec<f64>>> {
    k.check_lattice(lattice)?;
    if !f.lattice().same_mesh(lattice) {
        return Err(Error::validation(
            "mismatched lattice handles between function and kernel grid",
        ));
    }
    let n = k.n();
    if f.get(0).len() != n {
        return Err(Error::validation(format!(
            "function has {} components, kernel matrix is {n} x {n}",
            f.get(0).len()
        )));
    }
    let d = lattice.d();
    let cells = lattice.cell_count();
    let vol = lattice.cell_volume();
    let centers: Vec<[f64; 3]> = (0..cells).map(|c| lattice.cell_center(c)).collect();

    // Source-side correction for the modified kernel, constant in the
    // target and integrated exactly per source cell.
    let forward_correction: Option<Vec<f64>> =
        if matches!(k.scalar, ScalarKernel::ModifiedHilbert) && !k.adjoint {
            let mut acc = vec![0.0; n];
            for c in 0..cells {
                let lo = lattice.cell_low(c)[0];
                let w = halfline_log_integral(lo, lo + lattice.unit());
                if w != 0.0 {
                    for (a, v) in acc.iter_mut().zip(f.get(c)) {
                        *a += w * v;
                    }
                }
            }
            Some(acc)
        } else {
            None
        };
    // Adjoint correction: the target-side factor averaged exactly over
    // the output cell, times the plain integral of f.
    let adjoint_correction: Option<Vec<f64>> =
        if matches!(k.scalar, ScalarKernel::ModifiedHilbert) && k.adjoint {
            let mut total = vec![0.0; n];
            for c in 0..cells {
                for (a, v) in total.iter_mut().zip(f.get(c)) {
                    *a += vol * v;
                }
            }
            Some(total)
        } else {
            None
        };

    let out: Vec<Vec<f64>> = (0..cells)
        .into_par_iter()
        .map(|c| {
            let xc = &centers[c][..d];
            let mut acc = vec![0.0; n];
            for cp in 0..cells {
                if cp == c {
                    continue;
                }
                let yc = &centers[cp][..d];
                let (xa, ya) = if k.adjoint { (yc, xc) } else { (xc, yc) };
                let s = k
                    .pv_eval(xa, ya)
                    .expect("distinct cell centers are off the diagonal")
                    * vol;
                for (a, v) in acc.iter_mut().zip(f.get(cp)) {
                    *a += s * v;
                }
            }
            if let Some(corr) = &forward_correction {
                for (a, v) in acc.iter_mut().zip(corr) {
                    *a += v;
                }
            }
            if let Some(total) = &adjoint_correction {
                let lo = lattice.cell_low(c)[0];
                let g = halfline_log_integral(lo, lo + lattice.unit()) / vol;
                for (a, v) in acc.iter_mut().zip(total) {
                    *a += g * v;
                }
            }
            k.matrix.mul_vec(&acc)
        })
        .collect();
    SampledFunction::new(lattice.clone(), out)
}

/// One Haar coefficient matrix with its address and a heuristic
/// quadrature error estimate.
#[derive(Debug, Clone, Serialize)]
pub struct HaarMatrixEntry {
    pub i: CubeAddress,
    pub i_signature: Vec<u8>,
    pub j: CubeAddress,
    pub j_signature: Vec<u8>,
    pub value: Mat,
    pub quad_error: f64,
}

/// Minimal distance between two cubes, zero when they touch or overlap.
pub(crate) fn cube_distance(lattice: &DyadicLattice, a: &DyadicCube, b: &DyadicCube) -> f64 {
    let d = lattice.d();
    let la = lattice.cube_low(a);
    let lb = lattice.cube_low(b);
    let sa = lattice.side_length(a.level);
    let sb = lattice.side_length(b.level);
    let mut acc = 0.0;
    for axis in 0..d {
        let gap = (lb[axis] - (la[axis] + sa)).max(la[axis] - (lb[axis] + sb)).max(0.0);
        acc += gap * gap;
    }
    acc.sqrt()
}

/// Matrix entry (T_{I,J})_{ij} = <T(h_I e_j), h_J e_i>, by exact
/// summation over cell pairs with the singular diagonal skipped. The
/// source correction of the modified kernel pairs to zero against either
/// Haar factor, so it does not appear.
pub fn haar_matrix_coefficient(
    k: &KernelDescriptor,
    lattice: &DyadicLattice,
    i_cube: &DyadicCube,
    i_sig: HaarSignature,
    j_cube: &DyadicCube,
    j_sig: HaarSignature,
) -> Result<Mat> {
    k.check_lattice(lattice)?;
    if !lattice.is_valid_cube(i_cube) || !lattice.is_valid_cube(j_cube) {
        return Err(Error::validation("cube address outside lattice"));
    }
    if i_cube.level >= lattice.level_max() || j_cube.level >= lattice.level_max() {
        return Err(Error::validation(
            "Haar oscillation is not resolvable on a single-cell cube",
        ));
    }
    let d = lattice.d();
    let vol = lattice.cell_volume();
    let i_cells = lattice.cube_cells(i_cube);
    let j_cells = lattice.cube_cells(j_cube);
    let i_scale = lattice.cube_volume(i_cube.level).sqrt().recip();
    let j_scale = lattice.cube_volume(j_cube.level).sqrt().recip();

    let mut s = 0.0;
    for &cy in &i_cells {
        let yc = lattice.cell_center(cy);
        let hy = i_scale * cell_sign(lattice, i_cube, i_sig, cy);
        for &cx in &j_cells {
            if cx == cy {
                continue;
            }
            let xc = lattice.cell_center(cx);
            let hx = j_scale * cell_sign(lattice, j_cube, j_sig, cx);
            let (xa, ya) = if k.adjoint {
                (&yc[..d], &xc[..d])
            } else {
                (&xc[..d], &yc[..d])
            };
            s += hx * hy * k.pv_eval(xa, ya)?;
        }
    }
    Ok(k.matrix.scale(s * vol * vol))
}

/// Haar coefficient with its address and error estimate attached.
pub fn haar_matrix_entry(
    k: &KernelDescriptor,
    lattice: &DyadicLattice,
    i_cube: &DyadicCube,
    i_sig: HaarSignature,
    j_cube: &DyadicCube,
    j_sig: HaarSignature,
) -> Result<HaarMatrixEntry> {
    let value = haar_matrix_coefficient(k, lattice, i_cube, i_sig, j_cube, j_sig)?;
    let d = lattice.d() as f64;
    let h = lattice.unit();
    let li = lattice.cube_volume(i_cube.level).sqrt();
    let lj = lattice.cube_volume(j_cube.level).sqrt();
    let dist = cube_distance(lattice, i_cube, j_cube);
    let a_norm = op_norm(&k.matrix);
    let quad_error = if dist > 0.0 {
        a_norm * h * h * li * lj / (6.0 * dist.powf(d + 2.0))
    } else {
        let lmin = lattice
            .side_length(i_cube.level)
            .min(lattice.side_length(j_cube.level));
        a_norm * h * li * lj / lmin.powf(d + 1.0)
    };
    Ok(HaarMatrixEntry {
        i: CubeAddress::of(i_cube, lattice.d()),
        i_signature: i_sig.bits(),
        j: CubeAddress::of(j_cube, lattice.d()),
        j_signature: j_sig.bits(),
        value,
        quad_error,
    })
}

/// Sign of h_I^eps on the given cell, without the volume scale.
pub(crate) fn cell_sign(
    lattice: &DyadicLattice,
    cube: &DyadicCube,
    sig: HaarSignature,
    cell: usize,
) -> f64 {
    let axes = lattice.cell_axes(cell);
    let low = lattice.cube_low_units(cube);
    let unit_len = lattice.level_side_units(cube.level);
    let half = unit_len / 2;
    let mut child_mask = 0u32;
    for axis in 0..lattice.d() {
        if axes[axis] as i64 - low[axis] >= half {
            child_mask |= 1 << axis;
        }
    }
    sig.sign_on_child(child_mask)
}

/// pi_B f = sum over (I, eps) of B_I^eps m_I(f) h_I^eps, truncated to
/// the lattice levels. Constant symbols are annihilated exactly.
pub fn paraproduct_apply(
    b: &SampledFunction<Mat>,
    f: &SampledFunction<Vec<f64>>,
    lattice: &Arc<DyadicLattice>,
) -> Result<SampledFunction<Vec<f64>>> {
    check_symbol_function(b, f, lattice)?;
    let n = b.get(0).n();
    let bc = haar_transform(b, lattice)?;
    let means = f.level_means(lattice)?;
    let mut coeffs = HaarCoefficients::zeros(lattice.clone(), &vec![0.0; n])?;
    for level in 0..lattice.level_max() {
        for (ci, cube) in lattice.cubes_at_level(level).iter().enumerate() {
            for sig in HaarSignature::all(lattice.d()) {
                let bm = bc.get(cube, sig).expect("coefficient address is valid");
                coeffs.set(cube, sig, bm.mul_vec(&means[level][ci]))?;
            }
        }
    }
    crate::dyadic::haar::haar_inverse(&coeffs)
}

/// Adjoint paraproduct, (pi_B)* g = sum over (I, eps) of
/// (B_I^eps)^T g_I^eps 1_I / |I|.
pub fn paraproduct_adjoint_apply(
    b: &SampledFunction<Mat>,
    g: &SampledFunction<Vec<f64>>,
    lattice: &Arc<DyadicLattice>,
) -> Result<SampledFunction<Vec<f64>>> {
    check_symbol_function(b, g, lattice)?;
    let n = b.get(0).n();
    let bc = haar_transform(b, lattice)?;
    let gc = haar_transform(g, lattice)?;
    let lmax = lattice.level_max();
    // Running sums over ancestors, one row of vectors per level.
    let mut prev: Vec<Vec<f64>> = Vec::new();
    for level in 0..lmax {
        let cubes = lattice.cubes_at_level(level);
        let inv_vol = lattice.cube_volume(level).recip();
        let mut row = vec![vec![0.0; n]; cubes.len()];
        for (ci, cube) in cubes.iter().enumerate() {
            let mut acc = if level == 0 {
                vec![0.0; n]
            } else {
                let parent = lattice.parent(cube).expect("level above zero has parents");
                let pi = lattice
                    .cube_level_index(&parent)
                    .expect("parent address is valid");
                prev[pi].clone()
            };
            for sig in HaarSignature::all(lattice.d()) {
                let bm = bc.get(cube, sig).expect("coefficient address is valid");
                let gv = gc.get(cube, sig).expect("coefficient address is valid");
                let term = bm.transpose().mul_vec(gv);
                for (a, t) in acc.iter_mut().zip(&term) {
                    *a += t * inv_vol;
                }
            }
            row[ci] = acc;
        }
        prev = row;
    }
    let data: Vec<Vec<f64>> = (0..lattice.cell_count())
        .map(|cell| {
            if lmax == 0 {
                return vec![0.0; n];
            }
            let cube = lattice
                .cube_of_cell(lmax - 1, cell)
                .expect("cells have ancestors at every coarser level");
            let ci = lattice
                .cube_level_index(&cube)
                .expect("cell ancestor is a valid cube");
            prev[ci].clone()
        })
        .collect();
    SampledFunction::new(lattice.clone(), data)
}

/// [T, B] f = T(B f) - B(T f), with the symbol acting pointwise. The
/// commutator with the transposed symbol is `commutator_apply` on
/// `b.map(Mat::transpose)`.
pub fn commutator_apply(
    k: &KernelDescriptor,
    b: &SampledFunction<Mat>,
    f: &SampledFunction<Vec<f64>>,
    lattice: &Arc<DyadicLattice>,
) -> Result<SampledFunction<Vec<f64>>> {
    check_symbol_function(b, f, lattice)?;
    k.check_lattice(lattice)?;
    let bf = pointwise_apply(b, f);
    let t_bf = apply_czo(k, &bf, lattice)?;
    let tf = apply_czo(k, f, lattice)?;
    let b_tf = pointwise_apply(b, &tf);
    let data = t_bf
        .data()
        .iter()
        .zip(b_tf.data())
        .map(|(x, y)| x.iter().zip(y).map(|(a, b)| a - b).collect())
        .collect();
    SampledFunction::new(lattice.clone(), data)
}

/// Pointwise action of a matrix symbol on a vector function.
pub fn pointwise_apply(
    b: &SampledFunction<Mat>,
    f: &SampledFunction<Vec<f64>>,
) -> SampledFunction<Vec<f64>> {
    let data = b
        .data()
        .iter()
        .zip(f.data())
        .map(|(m, v)| m.mul_vec(v))
        .collect();
    SampledFunction::new(f.lattice().clone(), data)
        .expect("dimensions match the shared lattice")
}

fn check_symbol_function(
    b: &SampledFunction<Mat>,
    f: &SampledFunction<Vec<f64>>,
    lattice: &Arc<DyadicLattice>,
) -> Result<()> {
    if !b.lattice().same_mesh(lattice) || !f.lattice().same_mesh(lattice) {
        return Err(Error::validation(
            "mismatched lattice handles between symbol, function, and grid",
        ));
    }
    if b.get(0).n() != f.get(0).len() {
        return Err(Error::validation(format!(
            "symbol dimension {} does not match function dimension {}",
            b.get(0).n(),
            f.get(0).len()
        )));
    }
    Ok(())
}
