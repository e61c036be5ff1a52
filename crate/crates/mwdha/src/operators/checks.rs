//! Diagnostic checks on kernels against a fixed matrix weight: pointwise
//! kernel bounds seen through reducing operators, compatibility of the
//! matrix part, weak boundedness on test matrices, and decay of corrected
//! Haar coefficients.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::CubeAddress;
use crate::dyadic::haar::{haar_eval, HaarCoefficients, HaarSignature};
use crate::dyadic::{DyadicCube, DyadicLattice};
use crate::error::{Error, Result};
use crate::linalg::{op_norm, Mat};
use crate::weights::{MatrixWeight, ReducingField, ReducingMethod};

use super::t1::{compute_t1, T1Options};
use super::{
    cube_distance, haar_matrix_coefficient, halfline_log_integral, KernelDescriptor, ScalarKernel,
};

/// Order statistics of a nonnegative sample set.
#[derive(Debug, Clone, Serialize)]
pub struct Quantiles {
    pub q50: f64,
    pub q90: f64,
    pub q99: f64,
    pub max: f64,
}

impl Quantiles {
    pub(crate) fn from_samples(mut values: Vec<f64>) -> Self {
        if values.is_empty() {
            return Quantiles { q50: 0.0, q90: 0.0, q99: 0.0, max: 0.0 };
        }
        values.sort_by(|a, b| a.partial_cmp(b).expect("sample is not NaN"));
        let at = |q: f64| values[(q * (values.len() - 1) as f64).round() as usize];
        Quantiles { q50: at(0.5), q90: at(0.9), q99: at(0.99), max: *values.last().unwrap() }
    }
}

/// Suprema of the conjugated matrix part over every cube of the lattice.
#[derive(Debug, Clone, Serialize)]
pub struct CompatReport {
    /// sup over cubes of the operator norm of `V_I A V_I^{-1}`.
    pub primal_sup: f64,
    /// Same with the dual reducing operators and the transposed matrix part.
    pub dual_sup: f64,
    pub primal_attaining: CubeAddress,
    pub dual_attaining: CubeAddress,
    /// Per-level suprema, index = cube level.
    pub primal_per_level: Vec<f64>,
    pub dual_per_level: Vec<f64>,
}

/// Checks how the constant matrix part of a kernel interacts with the
/// reducing operators of a weight. Bounded suprema across refinement mean
/// the matrix part is compatible with the weight; in the incompatible case
/// the per-level suprema grow geometrically.
pub fn compat_check(
    matrix_part: &Mat,
    w: &MatrixWeight,
    p: f64,
    lattice: &Arc<DyadicLattice>,
    method: ReducingMethod,
) -> Result<CompatReport> {
    let field = ReducingField::compute(w, lattice, p, method)?;
    compat_check_with_field(matrix_part, &field)
}

/// Same as [`compat_check`] but reuses an existing reducing field.
pub fn compat_check_with_field(matrix_part: &Mat, field: &ReducingField) -> Result<CompatReport> {
    let lattice = field.lattice();
    if matrix_part.n() != field.n() {
        return Err(Error::validation("matrix part and weight dimensions differ"));
    }
    let a_t = matrix_part.transpose();
    let levels = lattice.level_max() + 1;
    let mut report = CompatReport {
        primal_sup: -1.0,
        dual_sup: -1.0,
        primal_attaining: CubeAddress::of(&lattice.cubes_at_level(0)[0], lattice.d()),
        dual_attaining: CubeAddress::of(&lattice.cubes_at_level(0)[0], lattice.d()),
        primal_per_level: vec![0.0; levels],
        dual_per_level: vec![0.0; levels],
    };
    for level in 0..levels {
        for cube in lattice.cubes_at_level(level) {
            let pair = field.get(&cube)?;
            let primal = conjugated_norm(&pair.v, matrix_part)?;
            let dual = conjugated_norm(&pair.v_dual, &a_t)?;
            report.primal_per_level[level] = report.primal_per_level[level].max(primal);
            report.dual_per_level[level] = report.dual_per_level[level].max(dual);
            if primal > report.primal_sup {
                report.primal_sup = primal;
                report.primal_attaining = CubeAddress::of(&cube, lattice.d());
            }
            if dual > report.dual_sup {
                report.dual_sup = dual;
                report.dual_attaining = CubeAddress::of(&cube, lattice.d());
            }
        }
    }
    Ok(report)
}

fn conjugated_norm(v: &crate::linalg::SpdMatrix, m: &Mat) -> Result<f64> {
    let inv = v.inverse().into_mat();
    Ok(op_norm(&v.mat().mul(m).mul(&inv)))
}

/// Sampled pointwise kernel bounds measured through reducing operators.
#[derive(Debug, Clone, Serialize)]
pub struct KernelConditionReport {
    pub alpha: f64,
    pub samples: usize,
    /// `|x - y|^d * ||V_I K(x,y) V_I^{-1}||` over sampled pairs.
    pub size: Quantiles,
    /// Smoothness ratios `||V_I (K(x,y) - K(x',y)) V_I^{-1}|| * |x-y|^{d+a} / |x-x'|^a`.
    pub holder: Quantiles,
    /// Same ratios for the adjoint kernel seen through the dual operators.
    pub dual_holder: Quantiles,
}

/// Samples the size and smoothness conditions of a kernel with the matrix
/// part conjugated by reducing operators. Every cube contributes
/// `triples_per_cube` point triples `(x, x', y)` of distinct cell centers
/// with `|x - y| > 2|x - x'|`.
pub fn kernel_condition_check(
    k: &KernelDescriptor,
    w: &MatrixWeight,
    p: f64,
    lattice: &Arc<DyadicLattice>,
    method: ReducingMethod,
    triples_per_cube: usize,
    seed: u64,
) -> Result<KernelConditionReport> {
    k.check_lattice(lattice)?;
    if w.n() != k.matrix().n() {
        return Err(Error::validation("weight and kernel matrix dimensions differ"));
    }
    if triples_per_cube == 0 {
        return Err(Error::validation("triples_per_cube must be positive"));
    }
    let field = ReducingField::compute(w, lattice, p, method)?;
    let k_adj = k.adjoint();
    let d = lattice.d();
    let cells = lattice.cell_count();
    let mut size = Vec::new();
    let mut holder = Vec::new();
    let mut dual_holder = Vec::new();
    for level in 0..=lattice.level_max() {
        for cube in lattice.cubes_at_level(level) {
            let pair = field.get(&cube)?;
            let v = pair.v.mat().clone();
            let v_inv = pair.v.inverse().into_mat();
            let vd = pair.v_dual.mat().clone();
            let vd_inv = pair.v_dual.inverse().into_mat();
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed ^ (lattice.cube_index(&cube).expect("enumerated cube") as u64)
                    .wrapping_mul(0x9e37_79b9_7f4a_7c15),
            );
            for _ in 0..triples_per_cube {
                let Some((x, xp, y)) = sample_triple(lattice, &mut rng, cells) else {
                    continue;
                };
                let dist = dist2(&x, &y, d).sqrt();
                let step = dist2(&x, &xp, d).sqrt();
                let kxy = k.matrix().scale(k.scalar_eval(&x, &y)?);
                let diff = kxy.sub(&k.matrix().scale(k.scalar_eval(&xp, &y)?));
                size.push(op_norm(&v.mul(&kxy).mul(&v_inv)) * dist.powi(d as i32));
                let scale = dist.powf(d as f64 + k.alpha()) / step.powf(k.alpha());
                holder.push(op_norm(&v.mul(&diff).mul(&v_inv)) * scale);
                let adj_diff = k_adj
                    .matrix()
                    .scale(k_adj.scalar_eval(&x, &y)?)
                    .sub(&k_adj.matrix().scale(k_adj.scalar_eval(&xp, &y)?));
                dual_holder.push(op_norm(&vd.mul(&adj_diff).mul(&vd_inv)) * scale);
            }
        }
    }
    Ok(KernelConditionReport {
        alpha: k.alpha(),
        samples: size.len(),
        size: Quantiles::from_samples(size),
        holder: Quantiles::from_samples(holder),
        dual_holder: Quantiles::from_samples(dual_holder),
    })
}

fn dist2(x: &[f64], y: &[f64], d: usize) -> f64 {
    (0..d).map(|a| (x[a] - y[a]) * (x[a] - y[a])).sum()
}

fn sample_triple(
    lattice: &DyadicLattice,
    rng: &mut ChaCha8Rng,
    cells: usize,
) -> Option<([f64; 3], [f64; 3], [f64; 3])> {
    let d = lattice.d();
    for _ in 0..128 {
        let cx = rng.random_range(0..cells);
        let cxp = rng.random_range(0..cells);
        let cy = rng.random_range(0..cells);
        if cx == cxp || cx == cy || cxp == cy {
            continue;
        }
        let x = lattice.cell_center(cx);
        let xp = lattice.cell_center(cxp);
        let y = lattice.cell_center(cy);
        if dist2(&x, &y, d) > 4.0 * dist2(&x, &xp, d) {
            return Some((x, xp, y));
        }
    }
    None
}

/// Weak boundedness suprema over nested cube pairs.
#[derive(Debug, Clone, Serialize)]
pub struct WbpReport {
    /// sup over `J <= I` of `(||V_I T_J V_I^{-1}|| + ||V'_I T_J^t V'_I^{-1}||) / |J|`.
    pub sup: f64,
    pub attaining_inner: CubeAddress,
    pub attaining_outer: CubeAddress,
    /// Suprema by level gap between the inner and the outer cube.
    pub per_gap_sup: Vec<f64>,
}

/// Evaluates the testing matrices `T_J = (integral of the kernel over J x J) A`
/// through the reducing operators of every ancestor of `J`. Principal value
/// integrals use the cell-center rule, where opposite orientations of a cell
/// pair cancel exactly for odd kernels.
pub fn weak_boundedness_check(
    k: &KernelDescriptor,
    w: &MatrixWeight,
    p: f64,
    lattice: &Arc<DyadicLattice>,
    method: ReducingMethod,
) -> Result<WbpReport> {
    let field = ReducingField::compute(w, lattice, p, method)?;
    weak_boundedness_check_with_field(k, &field)
}

/// Same as [`weak_boundedness_check`] but reuses an existing reducing field.
pub fn weak_boundedness_check_with_field(
    k: &KernelDescriptor,
    field: &ReducingField,
) -> Result<WbpReport> {
    let lattice = field.lattice().clone();
    k.check_lattice(&lattice)?;
    if field.n() != k.matrix().n() {
        return Err(Error::validation("weight and kernel matrix dimensions differ"));
    }
    let d = lattice.d();
    let levels = lattice.level_max() + 1;
    let mut report = WbpReport {
        sup: -1.0,
        attaining_inner: CubeAddress::of(&lattice.cubes_at_level(0)[0], d),
        attaining_outer: CubeAddress::of(&lattice.cubes_at_level(0)[0], d),
        per_gap_sup: vec![0.0; levels],
    };
    for level in 0..levels {
        let cubes = lattice.cubes_at_level(level);
        let scalars: Vec<f64> = cubes
            .par_iter()
            .map(|j| testing_scalar(k, &lattice, j))
            .collect::<Result<_>>()?;
        for (j, s) in cubes.iter().zip(scalars) {
            let t_j = k.matrix().scale(s);
            let t_j_t = t_j.transpose();
            let vol = lattice.cube_volume(j.level);
            let mut outer = Some(j.clone());
            while let Some(i) = outer {
                let pair = field.get(&i)?;
                let q = (conjugated_norm(&pair.v, &t_j)?
                    + conjugated_norm(&pair.v_dual, &t_j_t)?)
                    / vol;
                let gap = j.level - i.level;
                report.per_gap_sup[gap] = report.per_gap_sup[gap].max(q);
                if q > report.sup {
                    report.sup = q;
                    report.attaining_inner = CubeAddress::of(j, d);
                    report.attaining_outer = CubeAddress::of(&i, d);
                }
                outer = lattice.parent(&i);
            }
        }
    }
    Ok(report)
}

/// Integral of the scalar kernel factor over `J x J`, cell-center rule for
/// the principal value part, exact integral for the compactly supported
/// correction of the modified kernel.
fn testing_scalar(k: &KernelDescriptor, lattice: &DyadicLattice, j: &DyadicCube) -> Result<f64> {
    let cells = lattice.cube_cells(j);
    let vol = lattice.cell_volume();
    let mut pv = 0.0;
    for (a, &ca) in cells.iter().enumerate() {
        let xa = lattice.cell_center(ca);
        for &cb in cells.iter().skip(a + 1) {
            let xb = lattice.cell_center(cb);
            pv += k.pv_eval(&xa, &xb)? + k.pv_eval(&xb, &xa)?;
        }
    }
    let mut s = pv * vol * vol;
    if matches!(k.scalar(), ScalarKernel::ModifiedHilbert) {
        let lo = lattice.cube_low(j)[0];
        let side = lattice.side_length(j.level);
        s += lattice.cube_volume(j.level) * halfline_log_integral(lo, lo + side);
    }
    Ok(s)
}

/// Haar coefficient of the operator with both paraproduct parts removed.
/// The subtraction uses precomputed coefficient families of `T1` and `T*1`:
/// for `J` strictly inside `I` the coefficient loses `(T1)_J h_I(c_J)`, and
/// symmetrically with the adjoint family when `I` is strictly inside `J`.
pub fn haar_tilde_coefficient(
    k: &KernelDescriptor,
    lattice: &Arc<DyadicLattice>,
    t1: &HaarCoefficients<Mat>,
    t1_star: &HaarCoefficients<Mat>,
    i_cube: &DyadicCube,
    i_sig: HaarSignature,
    j_cube: &DyadicCube,
    j_sig: HaarSignature,
) -> Result<Mat> {
    let mut m = haar_matrix_coefficient(k, lattice, i_cube, i_sig, j_cube, j_sig)?;
    if strictly_inside(lattice, j_cube, i_cube) {
        let h = haar_eval(lattice, i_cube, i_sig, &lattice.cube_center(j_cube)[..lattice.d()])?;
        let c = t1
            .get(j_cube, j_sig)
            .ok_or_else(|| Error::validation("missing T1 coefficient for the inner cube"))?;
        m = m.sub(&c.scale(h));
    }
    if strictly_inside(lattice, i_cube, j_cube) {
        let h = haar_eval(lattice, j_cube, j_sig, &lattice.cube_center(i_cube)[..lattice.d()])?;
        let c = t1_star
            .get(i_cube, i_sig)
            .ok_or_else(|| Error::validation("missing adjoint coefficient for the inner cube"))?;
        m = m.sub(&c.transpose().scale(h));
    }
    Ok(m)
}

fn strictly_inside(lattice: &DyadicLattice, inner: &DyadicCube, outer: &DyadicCube) -> bool {
    if inner.level <= outer.level {
        return false;
    }
    let ilo = lattice.cube_low_units(inner);
    let olo = lattice.cube_low_units(outer);
    let iside = lattice.level_side_units(inner.level);
    let oside = lattice.level_side_units(outer.level);
    (0..lattice.d()).all(|a| ilo[a] >= olo[a] && ilo[a] + iside <= olo[a] + oside)
}

/// One cell of the decay histogram: pairs grouped by level gap and by the
/// distance between the cubes in units of the larger side length.
#[derive(Debug, Clone, Serialize)]
pub struct DecayBucket {
    pub scale_gap: usize,
    pub dist_class: usize,
    pub pairs: usize,
    pub max_ratio: f64,
    pub attaining: Option<(CubeAddress, CubeAddress)>,
}

/// Decay of corrected Haar coefficients over good cube pairs in a subtree.
#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub root: CubeAddress,
    pub alpha: f64,
    pub goodness_gap: u32,
    pub max_scale_gap: usize,
    pub good_pairs: usize,
    pub skipped_bad_pairs: usize,
    pub buckets: Vec<DecayBucket>,
    pub max_ratio: f64,
}

const DIST_CLASSES: usize = 4;

/// Measures `||V T~_{I,J} V^{-1}||` against the decay bound
/// `(l_I l_J)^{(d+a)/2} / (l_I + l_J + dist)^{d+a}` over pairs `I, J` inside
/// `root` with `l_I <= l_J` and level gap at most `max_scale_gap`. Pairs
/// whose smaller cube lies too close to the boundary of some much larger
/// cube (bad cubes at parameter `goodness_gap`) are skipped, and `V` is the
/// reducing operator of `root` throughout. Bounded ratios across buckets
/// witness the almost-orthogonality that drives the testing theorem.
#[allow(clippy::too_many_arguments)]
pub fn haar_decay_check(
    k: &KernelDescriptor,
    w: &MatrixWeight,
    p: f64,
    root: &DyadicCube,
    lattice: &Arc<DyadicLattice>,
    method: ReducingMethod,
    max_scale_gap: usize,
    goodness_gap: u32,
    t1_opts: &T1Options,
) -> Result<DecayReport> {
    k.check_lattice(lattice)?;
    if !lattice.is_valid_cube(root) {
        return Err(Error::validation("root cube does not belong to the lattice"));
    }
    if root.level >= lattice.level_max() {
        return Err(Error::validation("root cube has no Haar cubes inside it"));
    }
    if w.n() != k.matrix().n() {
        return Err(Error::validation("weight and kernel matrix dimensions differ"));
    }
    let d = lattice.d();
    let alpha = k.alpha();
    let pair = crate::weights::reducing_operator(w, lattice, root, p, method)?;
    let v = pair.v.mat().clone();
    let v_inv = pair.v.inverse().into_mat();
    let t1 = compute_t1(k, lattice, t1_opts)?.coeffs;
    let t1_star = compute_t1(&k.adjoint(), lattice, t1_opts)?.coeffs;

    let mut outer_cubes = Vec::new();
    for level in root.level..lattice.level_max() {
        outer_cubes.extend(cubes_inside(lattice, root, level));
    }
    let tables: Vec<(Vec<BucketAcc>, usize, usize)> = outer_cubes
        .par_iter()
        .map(|j| -> Result<(Vec<BucketAcc>, usize, usize)> {
            let mut acc = vec![BucketAcc::default(); (max_scale_gap + 1) * DIST_CLASSES];
            let mut good = 0;
            let mut skipped = 0;
            let lj = lattice.side_length(j.level);
            let top = (j.level + max_scale_gap).min(lattice.level_max() - 1);
            for li_level in j.level..=top {
                for i in cubes_inside(lattice, root, li_level) {
                    if lattice.is_bad(&i, goodness_gap, alpha) {
                        skipped += 1;
                        continue;
                    }
                    good += 1;
                    let li = lattice.side_length(i.level);
                    let dist = cube_distance(lattice, &i, j);
                    let denom = li + lj + dist;
                    let bound = (li * lj).powf(0.5 * (d as f64 + alpha))
                        / denom.powf(d as f64 + alpha);
                    let mut worst = 0.0f64;
                    for i_sig in HaarSignature::all(d) {
                        for j_sig in HaarSignature::all(d) {
                            let t = haar_tilde_coefficient(
                                k, lattice, &t1, &t1_star, &i, i_sig, j, j_sig,
                            )?;
                            worst = worst.max(op_norm(&v.mul(&t).mul(&v_inv)));
                        }
                    }
                    let ratio = worst / bound;
                    let gap = i.level - j.level;
                    let class = ((dist / lj).floor() as usize).min(DIST_CLASSES - 1);
                    let slot = &mut acc[gap * DIST_CLASSES + class];
                    slot.pairs += 1;
                    if ratio > slot.max_ratio {
                        slot.max_ratio = ratio;
                        slot.attaining = Some((CubeAddress::of(&i, d), CubeAddress::of(j, d)));
                    }
                }
            }
            Ok((acc, good, skipped))
        })
        .collect::<Result<_>>()?;

    let mut merged = vec![BucketAcc::default(); (max_scale_gap + 1) * DIST_CLASSES];
    let mut good_pairs = 0;
    let mut skipped_bad_pairs = 0;
    for (acc, good, skipped) in tables {
        good_pairs += good;
        skipped_bad_pairs += skipped;
        for (slot, local) in merged.iter_mut().zip(acc) {
            slot.pairs += local.pairs;
            if local.max_ratio > slot.max_ratio {
                slot.max_ratio = local.max_ratio;
                slot.attaining = local.attaining;
            }
        }
    }
    let mut buckets = Vec::new();
    let mut max_ratio = 0.0f64;
    for gap in 0..=max_scale_gap {
        for class in 0..DIST_CLASSES {
            let slot = &merged[gap * DIST_CLASSES + class];
            if slot.pairs == 0 {
                continue;
            }
            max_ratio = max_ratio.max(slot.max_ratio);
            buckets.push(DecayBucket {
                scale_gap: gap,
                dist_class: class,
                pairs: slot.pairs,
                max_ratio: slot.max_ratio,
                attaining: slot.attaining.clone(),
            });
        }
    }
    Ok(DecayReport {
        root: CubeAddress::of(root, d),
        alpha,
        goodness_gap,
        max_scale_gap,
        good_pairs,
        skipped_bad_pairs,
        buckets,
        max_ratio,
    })
}

#[derive(Debug, Clone, Default)]
struct BucketAcc {
    pairs: usize,
    max_ratio: f64,
    attaining: Option<(CubeAddress, CubeAddress)>,
}

fn cubes_inside(lattice: &DyadicLattice, root: &DyadicCube, level: usize) -> Vec<DyadicCube> {
    debug_assert!(level >= root.level);
    let factor = 1i64 << (level - root.level);
    let d = lattice.d();
    let mut out = Vec::with_capacity((factor as usize).pow(d as u32));
    let mut idx = vec![0i64; d];
    loop {
        let mut coords = [0i64; 3];
        for a in 0..d {
            coords[a] = root.coords[a] * factor + idx[a];
        }
        out.push(DyadicCube { level, coords });
        let mut a = d;
        loop {
            if a == 0 {
                return out;
            }
            a -= 1;
            idx[a] += 1;
            if idx[a] < factor {
                break;
            }
            idx[a] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::sampled::SampledFunction;

    fn arc_lattice(d: usize, level_max: usize) -> Arc<DyadicLattice> {
        Arc::new(DyadicLattice::standard(d, level_max).unwrap())
    }

    #[test]
    fn identity_data_gives_unit_size_ratio() {
        let lattice = arc_lattice(1, 5);
        let w = MatrixWeight::identity(lattice.clone(), 2);
        let k = KernelDescriptor::hilbert(Mat::identity(2));
        let report =
            kernel_condition_check(&k, &w, 2.0, &lattice, ReducingMethod::Auto, 8, 7).unwrap();
        assert!(report.samples > 100);
        assert!((report.size.max - 1.0).abs() < 1e-12);
        assert!((report.size.q50 - 1.0).abs() < 1e-12);
        assert!(report.holder.max <= 2.0 + 1e-12);
        assert!(report.dual_holder.max <= 2.0 + 1e-12);
    }

    #[test]
    fn size_ratio_of_a_convolution_kernel_matches_the_compat_sup() {
        let lattice = arc_lattice(1, 6);
        let w = MatrixWeight::power1d(lattice.clone(), &[0.6, -0.5]).unwrap();
        let a = Mat::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let k = KernelDescriptor::hilbert(a.clone());
        let cond =
            kernel_condition_check(&k, &w, 2.0, &lattice, ReducingMethod::Auto, 16, 3).unwrap();
        let compat = compat_check(&a, &w, 2.0, &lattice, ReducingMethod::Auto).unwrap();
        assert!((cond.size.max - compat.primal_sup).abs() <= 1e-9 * compat.primal_sup);
    }

    #[test]
    fn compat_separates_compatible_from_incompatible_matrix_parts() {
        let lattice = arc_lattice(1, 8);
        let w = MatrixWeight::power1d(lattice.clone(), &[0.75, -0.75]).unwrap();
        let diag = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let compat = compat_check(&diag, &w, 2.0, &lattice, ReducingMethod::Auto).unwrap();
        assert!((compat.primal_sup - 2.0).abs() < 1e-9);
        assert!((compat.dual_sup - 2.0).abs() < 1e-9);

        let swap = Mat::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let incompat = compat_check(&swap, &w, 2.0, &lattice, ReducingMethod::Auto).unwrap();
        let deep = incompat.primal_per_level[8];
        let shallow = incompat.primal_per_level[2];
        assert!(deep > 4.0 * shallow, "deep {deep} shallow {shallow}");
        assert_eq!(incompat.primal_attaining.level, 8);
    }

    #[test]
    fn odd_kernel_testing_matrices_vanish() {
        let lattice = arc_lattice(1, 4);
        let w = MatrixWeight::power1d(lattice.clone(), &[0.4, -0.3]).unwrap();
        let k = KernelDescriptor::hilbert(Mat::from_rows(&[vec![1.0, 0.5], vec![0.5, 2.0]]).unwrap());
        let report = weak_boundedness_check(&k, &w, 2.0, &lattice, ReducingMethod::Auto).unwrap();
        assert_eq!(report.sup, 0.0);
        assert!(report.per_gap_sup.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn modified_kernel_weak_boundedness_attains_the_log_value() {
        let lattice =
            Arc::new(DyadicLattice::with_base(1, 3, &[-2.0], 2).unwrap());
        let w = MatrixWeight::identity(lattice.clone(), 1);
        let k = KernelDescriptor::modified_hilbert(Mat::identity(1));
        let report = weak_boundedness_check(&k, &w, 2.0, &lattice, ReducingMethod::Auto).unwrap();
        let expected = 2.0 * std::f64::consts::LN_2;
        assert!((report.sup - expected).abs() < 1e-12, "sup {}", report.sup);
        assert!((report.per_gap_sup[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn tilde_coefficient_subtracts_the_nested_parts() {
        let lattice = arc_lattice(1, 4);
        let k = KernelDescriptor::hilbert(Mat::identity(2));
        let zero = Mat::zeros(2);
        let mut t1 = HaarCoefficients::zeros(lattice.clone(), &zero).unwrap();
        let t1_star = HaarCoefficients::zeros(lattice.clone(), &zero).unwrap();
        let outer = DyadicCube { level: 1, coords: [1, 0, 0] };
        let inner = DyadicCube { level: 3, coords: [4, 0, 0] };
        let sig = HaarSignature::all(1)[0];
        let marker = Mat::from_rows(&[vec![0.0, 3.0], vec![-1.0, 0.0]]).unwrap();
        t1.set(&inner, sig, marker.clone()).unwrap();

        let base = haar_matrix_coefficient(&k, &lattice, &outer, sig, &inner, sig).unwrap();
        let tilde =
            haar_tilde_coefficient(&k, &lattice, &t1, &t1_star, &outer, sig, &inner, sig).unwrap();
        let h = haar_eval(&lattice, &outer, sig, &lattice.cube_center(&inner)[..lattice.d()]).unwrap();
        assert!(h != 0.0);
        let expected = base.sub(&marker.scale(h));
        assert!(tilde.sub(&expected).max_abs() < 1e-15);

        let disjoint = DyadicCube { level: 3, coords: [1, 0, 0] };
        let plain =
            haar_tilde_coefficient(&k, &lattice, &t1, &t1_star, &disjoint, sig, &inner, sig)
                .unwrap();
        let plain_base =
            haar_matrix_coefficient(&k, &lattice, &disjoint, sig, &inner, sig).unwrap();
        assert!(plain.sub(&plain_base).max_abs() == 0.0);
    }

    #[test]
    fn decay_ratios_stay_bounded_for_the_convolution_kernel() {
        let lattice = arc_lattice(1, 6);
        let w = MatrixWeight::identity(lattice.clone(), 1);
        let k = KernelDescriptor::hilbert(Mat::identity(1));
        let root = DyadicCube { level: 0, coords: [0, 0, 0] };
        let opts = T1Options::for_lattice(&lattice);
        let report = haar_decay_check(
            &k,
            &w,
            2.0,
            &root,
            &lattice,
            ReducingMethod::Auto,
            3,
            5,
            &opts,
        )
        .unwrap();
        assert!(report.good_pairs > 100);
        assert!(report.max_ratio > 0.0);
        assert!(report.max_ratio < 10.0, "max ratio {}", report.max_ratio);
        assert!(report.buckets.iter().any(|b| b.scale_gap == 3));
        for bucket in &report.buckets {
            assert!(bucket.pairs > 0);
            assert!(bucket.max_ratio <= report.max_ratio);
        }
    }

    #[test]
    fn zero_matrix_part_gives_zero_decay_ratios() {
        let lattice = arc_lattice(1, 4);
        let w = MatrixWeight::identity(lattice.clone(), 2);
        let k = KernelDescriptor::hilbert(Mat::zeros(2));
        let root = DyadicCube { level: 1, coords: [0, 0, 0] };
        let opts = T1Options::for_lattice(&lattice);
        let report = haar_decay_check(
            &k,
            &w,
            2.0,
            &root,
            &lattice,
            ReducingMethod::Auto,
            2,
            5,
            &opts,
        )
        .unwrap();
        assert_eq!(report.max_ratio, 0.0);
    }

    #[test]
    fn planar_triples_respect_the_separation_constraint() {
        let lattice = arc_lattice(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let (x, xp, y) = sample_triple(&lattice, &mut rng, lattice.cell_count()).unwrap();
            assert!(dist2(&x, &y, 2) > 4.0 * dist2(&x, &xp, 2));
        }
    }

    #[test]
    fn testing_scalar_is_exact_on_an_explicit_cube() {
        let lattice =
            Arc::new(DyadicLattice::with_base(1, 3, &[-2.0], 2).unwrap());
        let k = KernelDescriptor::modified_hilbert(Mat::identity(1));
        let j = lattice.point_to_cell(&[1.25]).unwrap();
        let cube = lattice.cube_of_cell(2, j).unwrap();
        let s = testing_scalar(&k, &lattice, &cube).unwrap();
        assert!((s - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn strict_inclusion_needs_a_proper_level_drop() {
        let lattice = arc_lattice(2, 3);
        let outer = DyadicCube { level: 1, coords: [1, 1, 0] };
        let inner = DyadicCube { level: 2, coords: [2, 3, 0] };
        let outside = DyadicCube { level: 2, coords: [0, 3, 0] };
        assert!(strictly_inside(&lattice, &inner, &outer));
        assert!(!strictly_inside(&lattice, &outside, &outer));
        assert!(!strictly_inside(&lattice, &outer, &outer));
        assert!(!strictly_inside(&lattice, &outer, &inner));
    }

    #[test]
    fn subtree_enumeration_counts_match() {
        let lattice = arc_lattice(2, 4);
        let root = DyadicCube { level: 1, coords: [1, 0, 0] };
        assert_eq!(cubes_inside(&lattice, &root, 1), vec![root.clone()]);
        let grand = cubes_inside(&lattice, &root, 3);
        assert_eq!(grand.len(), 16);
        for c in &grand {
            assert!(strictly_inside(&lattice, c, &root));
            assert!(lattice.is_valid_cube(c));
        }
    }

    #[test]
    fn wbp_report_serializes_with_addresses() {
        let lattice = Arc::new(DyadicLattice::with_base(1, 3, &[-2.0], 2).unwrap());
        let w = MatrixWeight::identity(lattice.clone(), 1);
        let k = KernelDescriptor::modified_hilbert(Mat::identity(1));
        let report = weak_boundedness_check(&k, &w, 2.0, &lattice, ReducingMethod::Auto).unwrap();
        let text = serde_json::to_string(&report).unwrap();
        assert!(text.contains("attaining_inner"));
        assert!(report.sup > 0.0);
    }

    #[test]
    fn holder_ratios_reflect_kernel_smoothness_scale() {
        let lattice = arc_lattice(1, 6);
        let w = MatrixWeight::identity(lattice.clone(), 1);
        let k = KernelDescriptor::hilbert(Mat::identity(1));
        let report =
            kernel_condition_check(&k, &w, 2.0, &lattice, ReducingMethod::Auto, 12, 19).unwrap();
        assert!(report.holder.max <= 2.0 + 1e-12);
        assert!(report.holder.q50 > 0.0);
        assert!((report.holder.max - report.dual_holder.max).abs() < 1e-12);
    }

    #[test]
    fn constant_functions_see_no_tilde_mass_from_means() {
        let lattice = arc_lattice(1, 4);
        let k = KernelDescriptor::hilbert(Mat::identity(1));
        let f = SampledFunction::constant(lattice.clone(), vec![1.0]);
        let out = super::super::apply_czo(&k, &f, &lattice).unwrap();
        let total: f64 = out.data().iter().map(|v| v[0]).sum();
        assert!(total.abs() < 1e-9, "total {total}");
    }
}
