//! Oscillation functionals of matrix and vector symbols against a
//! matrix weight: the defining integral forms with the weight on one
//! side and a reducing operator on the other, the self-similar form
//! with reducing operators on both sides, square-function forms built
//! from Haar detail coefficients, and the trace bound tying the
//! weighted norms to the classical one.
//!
//! Every functional here is reported as the exponent-th root of the
//! supremum it is defined by, so values scale linearly in the symbol
//! and vanish exactly on constants.

pub mod carleson;
pub mod stopping;

pub use carleson::{carleson_embedding_check, CarlesonNorm, CarlesonSequence, EmbeddingReport};
pub use stopping::{
    stopping_time, stopping_time_with_field, suggested_lambda2, PackingRow, StopTrigger,
    StoppedCube, StoppingTree, DEFAULT_LAMBDA1,
};

use crate::dyadic::haar::{haar_inverse, haar_transform, HaarCoefficients, HaarSignature};
use crate::dyadic::sampled::{CellValue, SampledFunction};
use crate::dyadic::{seed_mix, DyadicCube, DyadicLattice};
use crate::error::{Error, Result};
use crate::linalg::{norm2, op_norm, Mat};
use crate::weights::{MatrixWeight, ReducingField, ReducingMethod};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

pub const DEFAULT_C_EQUIV: f64 = 32.0;

/// Cube address trimmed to the lattice dimension, for reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CubeAddress {
    pub level: usize,
    pub coords: Vec<i64>,
}

impl CubeAddress {
    pub fn of(cube: &DyadicCube, d: usize) -> Self {
        CubeAddress { level: cube.level, coords: cube.coords[..d].to_vec() }
    }
}

/// max(x/y, y/x), treating a pair of near-zeros as comparable.
pub fn symmetric_ratio(x: f64, y: f64) -> f64 {
    let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
    if hi < 1e-12 {
        1.0
    } else if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RatioEntry {
    pub lhs: String,
    pub rhs: String,
    pub ratio: f64,
}

fn pairwise_ratios(named: &[(&str, f64)]) -> (Vec<RatioEntry>, f64) {
    let mut out = Vec::new();
    let mut max_ratio = 1.0f64;
    for i in 0..named.len() {
        for j in i + 1..named.len() {
            let r = symmetric_ratio(named[i].1, named[j].1);
            max_ratio = max_ratio.max(r);
            out.push(RatioEntry {
                lhs: named[i].0.to_string(),
                rhs: named[j].0.to_string(),
                ratio: r,
            });
        }
    }
    (out, max_ratio)
}

fn check_exponent(name: &str, e: f64) -> Result<()> {
    if e > 1.0 && e.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(format!("{name} must lie in (1, infinity)")))
    }
}

fn check_symbol_matrix(b: &SampledFunction<Mat>, w: &MatrixWeight) -> Result<()> {
    if !b.lattice().same_mesh(w.lattice()) {
        return Err(Error::validation(
            "mismatched lattice handles between symbol and weight",
        ));
    }
    if b.get(0).n() != w.n() {
        return Err(Error::validation(format!(
            "symbol dimension {} does not match weight dimension {}",
            b.get(0).n(),
            w.n()
        )));
    }
    Ok(())
}

fn dual_exponent(p: f64) -> f64 {
    p / (p - 1.0)
}

/// sup over lattice cubes of the cell average of
/// || left(t) * (B(t) - m_I B) * right_I ||^e, with its attaining cube.
/// `left_cell` multiplies per cell, `left_cube` per cube; `right` is
/// indexed by the dense cube index.
fn matrix_osc_sup(
    lattice: &DyadicLattice,
    data: &[Mat],
    means: &[Vec<Mat>],
    left_cell: Option<&[Mat]>,
    left_cube: Option<&[Mat]>,
    right: &[Mat],
    e: f64,
) -> (f64, Option<DyadicCube>) {
    let mut best = f64::NEG_INFINITY;
    let mut best_cube = None;
    for k in 0..=lattice.level_max() {
        let cubes = lattice.cubes_at_level(k);
        let values: Vec<f64> = cubes
            .par_iter()
            .enumerate()
            .map(|(ci, cube)| {
                let idx = lattice.cube_index(cube).expect("enumerated cube is valid");
                let mean = &means[k][ci];
                let mut acc = 0.0;
                let mut count = 0usize;
                lattice.for_each_cell(cube, |cell| {
                    let mut m = data[cell].sub(mean);
                    if let Some(l) = left_cell {
                        m = l[cell].mul(&m);
                    }
                    if let Some(l) = left_cube {
                        m = l[idx].mul(&m);
                    }
                    acc += op_norm(&m.mul(&right[idx])).powf(e);
                    count += 1;
                });
                acc / count as f64
            })
            .collect();
        for (ci, v) in values.into_iter().enumerate() {
            if v > best {
                best = v;
                best_cube = Some(cubes[ci]);
            }
        }
    }
    (best.max(0.0), best_cube)
}

/// Vector variant: cell average of |left(t) right_I (f(t) - m_I f)|^e.
fn vector_osc_sup(
    lattice: &DyadicLattice,
    data: &[Vec<f64>],
    means: &[Vec<Vec<f64>>],
    left_cell: Option<&[Mat]>,
    left_cube: Option<&[Mat]>,
    e: f64,
) -> (f64, Option<DyadicCube>) {
    let mut best = f64::NEG_INFINITY;
    let mut best_cube = None;
    for k in 0..=lattice.level_max() {
        let cubes = lattice.cubes_at_level(k);
        let values: Vec<f64> = cubes
            .par_iter()
            .enumerate()
            .map(|(ci, cube)| {
                let idx = lattice.cube_index(cube).expect("enumerated cube is valid");
                let mean = &means[k][ci];
                let mut acc = 0.0;
                let mut count = 0usize;
                lattice.for_each_cell(cube, |cell| {
                    let mut v: Vec<f64> =
                        data[cell].iter().zip(mean.iter()).map(|(a, b)| a - b).collect();
                    if let Some(l) = left_cube {
                        v = l[idx].mul_vec(&v);
                    }
                    if let Some(l) = left_cell {
                        v = l[cell].mul_vec(&v);
                    }
                    acc += norm2(&v).powf(e);
                    count += 1;
                });
                acc / count as f64
            })
            .collect();
        for (ci, v) in values.into_iter().enumerate() {
            if v > best {
                best = v;
                best_cube = Some(cubes[ci]);
            }
        }
    }
    (best.max(0.0), best_cube)
}

struct ConditionValues {
    primal: f64,
    primal_cube: Option<DyadicCube>,
    dual: f64,
    dual_cube: Option<DyadicCube>,
}

/// The two integral conditions for one symbol: the primal form
/// W^(1/p)(x) (B - m_I B) V_I^-1 at exponent p, and the dual form
/// W^(-1/p)(x) (B* - m_I B*) (V_I')^-1 at exponent p'. Roots applied.
fn condition_values(
    b: &SampledFunction<Mat>,
    w: &MatrixWeight,
    field: &ReducingField,
) -> Result<ConditionValues> {
    let p = field.p();
    let pp = dual_exponent(p);
    let lattice = field.lattice();
    let means = b.level_means(lattice)?;

    let w_left = w.power_field(1.0 / p)?;
    let v_inv: Vec<Mat> = field
        .pairs()
        .par_iter()
        .map(|pr| pr.v.inverse().into_mat())
        .collect();
    let (raw_primal, primal_cube) =
        matrix_osc_sup(lattice, b.data(), &means, Some(&w_left), None, &v_inv, p);

    let data_t: Vec<Mat> = b.data().iter().map(Mat::transpose).collect();
    let means_t: Vec<Vec<Mat>> = means
        .iter()
        .map(|row| row.iter().map(Mat::transpose).collect())
        .collect();
    let w_dual = w.power_field(-1.0 / p)?;
    let vd_inv: Vec<Mat> = field
        .pairs()
        .par_iter()
        .map(|pr| pr.v_dual.inverse().into_mat())
        .collect();
    let (raw_dual, dual_cube) =
        matrix_osc_sup(lattice, &data_t, &means_t, Some(&w_dual), None, &vd_inv, pp);

    Ok(ConditionValues {
        primal: raw_primal.powf(1.0 / p),
        primal_cube,
        dual: raw_dual.powf(1.0 / pp),
        dual_cube,
    })
}

/// The defining oscillation norm of a matrix symbol: the primal form
/// for p > 2, the dual form for p < 2, the larger of the two at p = 2.
pub fn bmo_w_norm(b: &SampledFunction<Mat>, w: &MatrixWeight, p: f64) -> Result<f64> {
    check_exponent("p", p)?;
    check_symbol_matrix(b, w)?;
    let field = ReducingField::compute(w, w.lattice(), p, ReducingMethod::Auto)?;
    bmo_w_norm_with_field(b, w, &field)
}

pub fn bmo_w_norm_with_field(
    b: &SampledFunction<Mat>,
    w: &MatrixWeight,
    field: &ReducingField,
) -> Result<f64> {
    check_symbol_matrix(b, w)?;
    let vals = condition_values(b, w, field)?;
    let p = field.p();
    Ok(if p > 2.0 {
        vals.primal
    } else if p < 2.0 {
        vals.dual
    } else {
        vals.primal.max(vals.dual)
    })
}

/// The three equivalent conditions, evaluated side by side.
#[derive(Debug, Clone, Serialize)]
pub struct BmoConditions {
    pub p: f64,
    /// Case-split value: primal for p >= 2, dual for p <= 2.
    pub defining: f64,
    pub primal: f64,
    pub dual: f64,
    pub primal_cube: Option<CubeAddress>,
    pub dual_cube: Option<CubeAddress>,
    pub ratios: Vec<RatioEntry>,
    pub max_ratio: f64,
    /// Advisory flag only: max_ratio <= c_equiv.
    pub comparable: bool,
    pub c_equiv: f64,
}

pub fn bmo_conditions(
    b: &SampledFunction<Mat>,
    w: &MatrixWeight,
    p: f64,
    c_equiv: f64,
) -> Result<BmoConditions> {
    check_exponent("p", p)?;
    check_symbol_matrix(b, w)?;
    let field = ReducingField::compute(w, w.lattice(), p, ReducingMethod::Auto)?;
    bmo_conditions_with_field(b, w, &field, c_equiv)
}

pub fn bmo_conditions_with_field(
    b: &SampledFunction<Mat>,
    w: &MatrixWeight,
    field: &ReducingField,
    c_equiv: f64,
) -> Result<BmoConditions> {
    check_symbol_matrix(b, w)?;
    let p = field.p();
    let d = field.lattice().d();
    let vals = condition_values(b, w, field)?;
    let defining = if p > 2.0 {
        vals.primal
    } else if p < 2.0 {
        vals.dual
    } else {
        vals.primal.max(vals.dual)
    };
    let named = [
        ("defining", defining),
        ("primal", vals.primal),
        ("dual", vals.dual),
    ];
    let (ratios, max_ratio) = pairwise_ratios(&named);
    Ok(BmoConditions {
        p,
        defining,
        primal: vals.primal,
        dual: vals.dual,
        primal_cube: vals.primal_cube.map(|c| CubeAddress::of(&c, d)),
        dual_cube: vals.dual_cube.map(|c| CubeAddress::of(&c, d)),
        ratios,
        max_ratio,
        comparable: max_ratio <= c_equiv,
        c_equiv,
    })
}

/// Self-similar oscillation: sup_I of the average of
/// ||V_I (B - m_I B) V_I^-1||^q, reported as its q-th root.
pub fn bmo_wpq_norm(
    b: &SampledFunction<Mat>,
    w: &MatrixWeight,
    p: f64,
    q: f64,
) -> Result<f64> {
    check_exponent("p", p)?;
    check_symbol_matrix(b, w)?;
    let field = ReducingField::compute(w, w.lattice(), p, ReducingMethod::Auto)?;
    bmo_wpq_norm_with_field(b, &field, q)
}

pub fn bmo_wpq_norm_with_field(
    b: &SampledFunction<Mat>,
    field: &ReducingField,
    q: f64,
) -> Result<f64> {
    check_exponent("q", q)?;
    let lattice = field.lattice();
    let means = b.level_means(lattice)?;
    let v: Vec<Mat> = field.pairs().iter().map(|pr| pr.v.mat().clone()).collect();
    let v_inv: Vec<Mat> = field
        .pairs()
        .par_iter()
        .map(|pr| pr.v.inverse().into_mat())
        .collect();
    let (raw, _) = matrix_osc_sup(lattice, b.data(), &means, None, Some(&v), &v_inv, q);
    Ok(raw.powf(1.0 / q))
}

/// Which oscillation form to evaluate for a vector symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorBmoForm {
    /// |V_J^-1 (f - m_J f)|^q.
    Reducing,
    /// |W^(-1/p)(x) (f - m_J f)|^(p'); q is ignored.
    DualWeight,
}

/// Oscillation of a vector symbol, in either form; roots applied so
/// the value is linear in f.
pub fn vector_bmo(
    f: &SampledFunction<Vec<f64>>,
    w: &MatrixWeight,
    p: f64,
    q: f64,
    form: VectorBmoForm,
) -> Result<f64> {
    check_exponent("p", p)?;
    match form {
        VectorBmoForm::Reducing => {
            let field = ReducingField::compute(w, w.lattice(), p, ReducingMethod::Auto)?;
            vector_bmo_with_field(f, w, &field, q, form)
        }
        VectorBmoForm::DualWeight => {
            if !f.lattice().same_mesh(w.lattice()) {
                return Err(Error::validation(
                    "mismatched lattice handles between symbol and weight",
                ));
            }
            if f.get(0).len() != w.n() {
                return Err(Error::validation(
                    "vector symbol dimension must match the weight",
                ));
            }
            let lattice = w.lattice();
            let pp = dual_exponent(p);
            let means = f.level_means(lattice)?;
            let w_dual = w.power_field(-1.0 / p)?;
            let (raw, _) =
                vector_osc_sup(lattice, f.data(), &means, Some(&w_dual), None, pp);
            Ok(raw.powf(1.0 / pp))
        }
    }
}

pub fn vector_bmo_with_field(
    f: &SampledFunction<Vec<f64>>,
    w: &MatrixWeight,
    field: &ReducingField,
    q: f64,
    form: VectorBmoForm,
) -> Result<f64> {
    if form == VectorBmoForm::DualWeight {
        return vector_bmo(f, w, field.p(), q, form);
    }
    check_exponent("q", q)?;
    let lattice = field.lattice();
    if !f.lattice().same_mesh(lattice) {
        return Err(Error::validation(
            "mismatched lattice handles between symbol and weight",
        ));
    }
    if f.get(0).len() != w.n() {
        return Err(Error::validation(
            "vector symbol dimension must match the weight",
        ));
    }
    let means = f.level_means(lattice)?;
    let v_inv: Vec<Mat> = field
        .pairs()
        .par_iter()
        .map(|pr| pr.v.inverse().into_mat())
        .collect();
    let (raw, _) = vector_osc_sup(lattice, f.data(), &means, None, Some(&v_inv), q);
    Ok(raw.powf(1.0 / q))
}

/// Per-cube masses of the Haar detail coefficients of a matrix symbol:
/// conjugated by reducing operators, the same for the adjoint symbol,
/// and the plain Frobenius mass. Rows cover every level.
fn haar_square_masses(
    b: &SampledFunction<Mat>,
    field: &ReducingField,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let lattice = field.lattice();
    let coeffs = haar_transform(b, lattice)?;
    let lmax = lattice.level_max();
    let sigs = HaarSignature::all(lattice.d());
    let mut conj = Vec::with_capacity(lmax + 1);
    let mut conj_adj = Vec::with_capacity(lmax + 1);
    let mut plain = Vec::with_capacity(lmax + 1);
    for k in 0..lmax {
        let cubes = lattice.cubes_at_level(k);
        let rows: Vec<(f64, f64, f64)> = cubes
            .par_iter()
            .map(|cube| {
                let idx = lattice.cube_index(cube).expect("enumerated cube is valid");
                let pair = &field.pairs()[idx];
                let v = pair.v.mat();
                let v_inv = pair.v.inverse().into_mat();
                let mut c_mass = 0.0;
                let mut a_mass = 0.0;
                let mut p_mass = 0.0;
                for sig in &sigs {
                    let c = coeffs.get(cube, *sig).expect("transform fills every slot");
                    c_mass += op_norm(&v.mul(c).mul(&v_inv)).powi(2);
                    a_mass += op_norm(&v.mul(&c.transpose()).mul(&v_inv)).powi(2);
                    p_mass += c.frobenius().powi(2);
                }
                (c_mass, a_mass, p_mass)
            })
            .collect();
        conj.push(rows.iter().map(|r| r.0).collect());
        conj_adj.push(rows.iter().map(|r| r.1).collect());
        plain.push(rows.iter().map(|r| r.2).collect());
    }
    let finest = vec![0.0; lattice.cube_count_at_level(lmax)];
    conj.push(finest.clone());
    conj_adj.push(finest.clone());
    plain.push(finest);
    Ok((conj, conj_adj, plain))
}

/// Square-function form of the weighted oscillation norm:
/// (sup_J |J|^-1 sum over I in J, sig of ||V_I B_I V_I^-1||^2)^(1/2).
/// Defined on unshifted lattices, where the Haar system lives.
pub fn bmo_square_norm(b: &SampledFunction<Mat>, w: &MatrixWeight, p: f64) -> Result<f64> {
    check_exponent("p", p)?;
    check_symbol_matrix(b, w)?;
    let field = ReducingField::compute(w, w.lattice(), p, ReducingMethod::Auto)?;
    bmo_square_norm_with_field(b, &field)
}

pub fn bmo_square_norm_with_field(
    b: &SampledFunction<Mat>,
    field: &ReducingField,
) -> Result<f64> {
    let (conj, _, _) = haar_square_masses(b, field)?;
    let (sup, _) = carleson::tree_sup(field.lattice(), &conj);
    Ok(sup.sqrt())
}

/// The four quantities of the trace bound: the weighted square-function
/// norms of the symbol and its adjoint, the classical Frobenius
/// square-function norm, and classical^2 / (weighted * weighted_adjoint),
/// which the trace argument bounds by the dimension n.
#[derive(Debug, Clone, Serialize)]
pub struct TraceCheck {
    pub weighted: f64,
    pub weighted_adjoint: f64,
    pub classical: f64,
    pub ratio: f64,
}

pub fn bmo_trace_check(
    b: &SampledFunction<Mat>,
    w: &MatrixWeight,
    p: f64,
) -> Result<TraceCheck> {
    check_exponent("p", p)?;
    check_symbol_matrix(b, w)?;
    let field = ReducingField::compute(w, w.lattice(), p, ReducingMethod::Auto)?;
    bmo_trace_check_with_field(b, &field)
}

pub fn bmo_trace_check_with_field(
    b: &SampledFunction<Mat>,
    field: &ReducingField,
) -> Result<TraceCheck> {
    let lattice = field.lattice();
    let (conj, conj_adj, plain) = haar_square_masses(b, field)?;
    let weighted = carleson::tree_sup(lattice, &conj).0.sqrt();
    let weighted_adjoint = carleson::tree_sup(lattice, &conj_adj).0.sqrt();
    let classical = carleson::tree_sup(lattice, &plain).0.sqrt();
    let denom = weighted * weighted_adjoint;
    let ratio = if classical < 1e-12 && denom < 1e-12 {
        0.0
    } else if denom == 0.0 {
        f64::INFINITY
    } else {
        classical.powi(2) / denom
    };
    Ok(TraceCheck { weighted, weighted_adjoint, classical, ratio })
}

/// All oscillation forms of one matrix symbol on one lattice, with the
/// attaining cubes and the pairwise ratio table.
#[derive(Debug, Clone, Serialize)]
pub struct BmoReport {
    pub p: f64,
    pub q: f64,
    pub defining: f64,
    pub primal: f64,
    pub dual: f64,
    pub self_similar: f64,
    /// Absent on shifted lattices, where no Haar system is defined.
    pub square_form: Option<f64>,
    pub primal_cube: Option<CubeAddress>,
    pub dual_cube: Option<CubeAddress>,
    pub ratios: Vec<RatioEntry>,
    pub max_ratio: f64,
    pub comparable: bool,
    pub c_equiv: f64,
}

pub fn bmo_report(
    b: &SampledFunction<Mat>,
    w: &MatrixWeight,
    p: f64,
    q: f64,
    c_equiv: f64,
) -> Result<BmoReport> {
    check_exponent("p", p)?;
    check_exponent("q", q)?;
    check_symbol_matrix(b, w)?;
    let field = ReducingField::compute(w, w.lattice(), p, ReducingMethod::Auto)?;
    bmo_report_with_field(b, w, &field, q, c_equiv)
}

pub fn bmo_report_with_field(
    b: &SampledFunction<Mat>,
    w: &MatrixWeight,
    field: &ReducingField,
    q: f64,
    c_equiv: f64,
) -> Result<BmoReport> {
    let conditions = bmo_conditions_with_field(b, w, field, c_equiv)?;
    let self_similar = bmo_wpq_norm_with_field(b, field, q)?;
    let square_form = if field.lattice().is_unshifted() {
        Some(bmo_square_norm_with_field(b, field)?)
    } else {
        None
    };
    let mut named = vec![
        ("defining", conditions.defining),
        ("primal", conditions.primal),
        ("dual", conditions.dual),
        ("self_similar", self_similar),
    ];
    if let Some(sq) = square_form {
        named.push(("square_form", sq));
    }
    let (ratios, max_ratio) = pairwise_ratios(&named);
    Ok(BmoReport {
        p: conditions.p,
        q,
        defining: conditions.defining,
        primal: conditions.primal,
        dual: conditions.dual,
        self_similar,
        square_form,
        primal_cube: conditions.primal_cube,
        dual_cube: conditions.dual_cube,
        ratios,
        max_ratio,
        comparable: max_ratio <= c_equiv,
        c_equiv,
    })
}

/// Random symbol with Haar detail only at levels below `depth`, so the
/// same (seed, depth) names the same function on every lattice deep
/// enough to resolve it. Coefficients scale like |I|^(1/2), which keeps
/// oscillation flat across levels.
pub fn random_haar_symbol(
    lattice: &Arc<DyadicLattice>,
    n: usize,
    depth: usize,
    seed: u64,
) -> Result<SampledFunction<Mat>> {
    let coeffs = random_coeffs(lattice, depth, seed, |rng, scale| {
        let mut m = Mat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.set(i, j, rng.random_range(-1.0..1.0) * scale);
            }
        }
        m
    })?;
    haar_inverse(&coeffs)
}

/// Vector counterpart of `random_haar_symbol`.
pub fn random_haar_vector(
    lattice: &Arc<DyadicLattice>,
    n: usize,
    depth: usize,
    seed: u64,
) -> Result<SampledFunction<Vec<f64>>> {
    let coeffs = random_coeffs(lattice, depth, seed, |rng, scale| {
        (0..n).map(|_| rng.random_range(-1.0..1.0) * scale).collect::<Vec<f64>>()
    })?;
    haar_inverse(&coeffs)
}

fn random_coeffs<T: CellValue>(
    lattice: &Arc<DyadicLattice>,
    depth: usize,
    seed: u64,
    mut draw: impl FnMut(&mut ChaCha8Rng, f64) -> T,
) -> Result<HaarCoefficients<T>> {
    if depth == 0 {
        return Err(Error::validation("random symbols need depth at least 1"));
    }
    let mut zero_rng = ChaCha8Rng::seed_from_u64(0);
    let zero = draw(&mut zero_rng, 0.0);
    let mut coeffs = HaarCoefficients::zeros(lattice.clone(), &zero)?;
    let sigs = HaarSignature::all(lattice.d());
    for level in 0..depth.min(lattice.level_max()) {
        let scale = lattice.cube_volume(level).sqrt();
        for cube in lattice.cubes_at_level(level) {
            for (si, &sig) in sigs.iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(seed_mix(&[
                    seed,
                    level as u64,
                    si as u64,
                    cube.coords[0] as u64,
                    cube.coords[1] as u64,
                    cube.coords[2] as u64,
                ]));
                coeffs.set(&cube, sig, draw(&mut rng, scale))?;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed_mix(&[seed, u64::MAX]));
    coeffs.set_mean(draw(&mut rng, 1.0));
    Ok(coeffs)
}

/// Random Carleson sequence with entries at levels below `depth`,
/// normalized so the tree norm is exactly one.
pub fn random_carleson_sequence(
    lattice: &Arc<DyadicLattice>,
    n: usize,
    depth: usize,
    seed: u64,
) -> Result<CarlesonSequence> {
    if depth == 0 {
        return Err(Error::validation("random sequences need depth at least 1"));
    }
    let mut seq = CarlesonSequence::zeros(lattice.clone(), n)?;
    let sigs = HaarSignature::all(lattice.d());
    for level in 0..depth.min(lattice.level_max()) {
        let scale = lattice.cube_volume(level).sqrt();
        for cube in lattice.cubes_at_level(level) {
            for (si, &sig) in sigs.iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(seed_mix(&[
                    seed,
                    0x5e9,
                    level as u64,
                    si as u64,
                    cube.coords[0] as u64,
                    cube.coords[1] as u64,
                    cube.coords[2] as u64,
                ]));
                let v: Vec<f64> =
                    (0..n).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
                seq.set(&cube, sig, v)?;
            }
        }
    }
    let norm = seq.carleson_norm();
    if norm <= 0.0 {
        return Err(Error::validation("random sequence degenerated to zero"));
    }
    seq.scale(1.0 / norm);
    Ok(seq)
}
