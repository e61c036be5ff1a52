//! Weight characteristics: the averaging A_p supremum, its
//! reducing-operator form, the B_{2,p} tail condition, and the
//! square-function norm built from reducing operators.

use super::reducing::ReducingField;
use super::MatrixWeight;
use crate::dyadic::haar::haar_transform;
use crate::dyadic::sampled::SampledFunction;
use crate::dyadic::{DyadicCube, DyadicLattice};
use crate::error::{Error, Result};
use crate::linalg::{norm2, op_norm, Mat};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Pairwise-term budget per cube before the double sum switches to a
/// stratified subsample.
pub const DEFAULT_PAIR_CAP: usize = 1 << 20;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApCharacteristic {
    pub value: f64,
    pub attaining_cube: DyadicCube,
    /// Half distance between the two interleaved subsample estimates of
    /// the attaining cube; zero when every cube was summed exactly.
    pub sampling_error: f64,
    /// Number of cubes that exceeded the pair cap and were subsampled.
    pub subsampled_cubes: usize,
}

/// The averaging characteristic:
/// sup_I |I|^-1 int_I (|I|^-1 int_I ||W^(1/p)(x) W^(-1/p)(t)||^p' dt)^(p/p') dx.
pub fn ap_characteristic(
    w: &MatrixWeight,
    p: f64,
    lattice: &Arc<DyadicLattice>,
    pair_cap: usize,
) -> Result<ApCharacteristic> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::validation("p must lie in (1, infinity)"));
    }
    if !w.lattice().same_mesh(lattice) {
        return Err(Error::validation(
            "mismatched lattice handles between weight and supremum lattice",
        ));
    }
    let plus = w.power_field(1.0 / p)?;
    let minus = w.power_field(-1.0 / p)?;
    let pp = p / (p - 1.0);
    let cubes = lattice.all_cubes();
    let evals: Vec<(f64, f64, bool)> = cubes
        .par_iter()
        .map(|cube| cube_ap_value(lattice, &plus, &minus, cube, p, pp, pair_cap))
        .collect();
    let mut best = f64::NEG_INFINITY;
    let mut best_cube = cubes[0];
    let mut best_err = 0.0;
    let mut subsampled = 0usize;
    for (cube, (value, err, was_sampled)) in cubes.iter().zip(&evals) {
        if *was_sampled {
            subsampled += 1;
        }
        if *value > best {
            best = *value;
            best_cube = *cube;
            best_err = *err;
        }
    }
    Ok(ApCharacteristic {
        value: best,
        attaining_cube: best_cube,
        sampling_error: best_err,
        subsampled_cubes: subsampled,
    })
}

/// Value for one cube: mean over x of (mean over t of
/// ||P(x) M(t)||^p')^(p/p'). Exact when cells^2 fits the cap, otherwise
/// two interleaved stratified subsamples whose average is reported with
/// half their spread as the error.
fn cube_ap_value(
    lattice: &DyadicLattice,
    plus: &[Mat],
    minus: &[Mat],
    cube: &DyadicCube,
    p: f64,
    pp: f64,
    pair_cap: usize,
) -> (f64, f64, bool) {
    let cells = lattice.cube_cells(cube);
    let m = cells.len();
    if m * m <= pair_cap.max(1) {
        (ap_double_sum(&cells, &cells, plus, minus, p, pp), 0.0, false)
    } else {
        let target = (pair_cap as f64).sqrt().max(2.0) as usize;
        let stride = m.div_ceil(target);
        let pick = |offset: usize| -> Vec<usize> {
            cells.iter().copied().skip(offset).step_by(stride).collect()
        };
        let a = pick(stride / 3);
        let b = pick((2 * stride) / 3);
        let va = ap_double_sum(&a, &a, plus, minus, p, pp);
        let vb = ap_double_sum(&b, &b, plus, minus, p, pp);
        (0.5 * (va + vb), 0.5 * (va - vb).abs(), true)
    }
}

fn ap_double_sum(
    xs: &[usize],
    ts: &[usize],
    plus: &[Mat],
    minus: &[Mat],
    p: f64,
    pp: f64,
) -> f64 {
    let inv_t = 1.0 / ts.len() as f64;
    let sum: f64 = xs
        .iter()
        .map(|&x| {
            let px = &plus[x];
            let inner: f64 = ts
                .iter()
                .map(|&t| op_norm(&px.mul(&minus[t])).powf(pp))
                .sum::<f64>()
                * inv_t;
            inner.powf(p / pp)
        })
        .sum();
    sum / xs.len() as f64
}

/// Reducing-operator characteristic: sup over cubes of ||V_I V_I'||^p.
pub fn ap_characteristic_reducing(
    field: &ReducingField,
) -> Result<ApCharacteristic> {
    let p = field.p();
    let mut best = f64::NEG_INFINITY;
    let mut best_cube = None;
    for pair in field.pairs() {
        let v = op_norm(&pair.v.mat().mul(pair.v_dual.mat())).powf(p);
        if v > best {
            best = v;
            best_cube = Some(pair.cube);
        }
    }
    let attaining_cube = best_cube
        .ok_or_else(|| Error::validation("reducing field has no cubes"))?;
    Ok(ApCharacteristic {
        value: best,
        attaining_cube,
        sampling_error: 0.0,
        subsampled_cubes: 0,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct B2pCharacteristic {
    pub value: f64,
    pub attaining_cube: DyadicCube,
    /// Estimated mass lost to truncation at the base-cube boundary for
    /// the attaining cube: kernel tail integral times the observed mean
    /// norm.
    pub truncation_deficit: f64,
}

/// One-dimensional tail condition:
/// sup_I |I| * sum_{cells t outside I} ||V_I^-1 W^(1/p)(t)|| / |t-c_I|^2 * dt.
pub fn b2p_characteristic(
    w: &MatrixWeight,
    field: &ReducingField,
    p: f64,
) -> Result<B2pCharacteristic> {
    let lattice = field.lattice();
    if lattice.d() != 1 {
        return Err(Error::unsupported(
            "the tail characteristic is defined for dimension 1 only",
        ));
    }
    if !w.lattice().same_mesh(lattice) {
        return Err(Error::validation(
            "mismatched lattice handles between weight and reducing field",
        ));
    }
    if field.p() != p {
        return Err(Error::validation(
            "reducing field was computed for a different exponent",
        ));
    }
    let plus = w.power_field(1.0 / p)?;
    let unit = lattice.unit();
    let base_low = lattice.base_origin()[0];
    let base_high = base_low + lattice.base_side();
    let cell_centers: Vec<f64> = (0..lattice.cell_count())
        .map(|c| lattice.cell_center(c)[0])
        .collect();
    let mut best = f64::NEG_INFINITY;
    let mut best_cube = None;
    let mut best_deficit = 0.0;
    for pair in field.pairs() {
        let cube = pair.cube;
        let vinv = pair.v.inverse();
        let low = lattice.cube_low(&cube)[0];
        let side = lattice.side_length(cube.level);
        let center = low + 0.5 * side;
        let mut sum = 0.0;
        let mut norm_sum = 0.0;
        let mut outside = 0usize;
        for (cell, &t) in cell_centers.iter().enumerate() {
            if t >= low && t < low + side {
                continue;
            }
            let nrm = op_norm(&vinv.mat().mul(&plus[cell]));
            sum += nrm / ((t - center) * (t - center)) * unit;
            norm_sum += nrm;
            outside += 1;
        }
        let value = side * sum;
        if value > best {
            best = value;
            best_cube = Some(cube);
            // Tail of |t - c|^-2 beyond each base edge, scaled by the
            // mean observed norm outside I.
            let mean_norm = if outside > 0 {
                norm_sum / outside as f64
            } else {
                op_norm(&vinv.mat().mul(&plus[0]))
            };
            let tail = 1.0 / (center - base_low).max(unit)
                + 1.0 / (base_high - center).max(unit);
            best_deficit = side * mean_norm * tail;
        }
    }
    let attaining_cube =
        best_cube.ok_or_else(|| Error::validation("reducing field has no cubes"))?;
    Ok(B2pCharacteristic {
        value: best,
        attaining_cube,
        truncation_deficit: best_deficit,
    })
}

/// Square-function norm:
/// ( int ( sum_{I,eps} |V_I f_I^eps|^2 / |I| * 1_I(x) )^(p/2) dx )^(1/p).
pub fn square_function_norm(
    f: &SampledFunction<Vec<f64>>,
    field: &ReducingField,
    p: f64,
) -> Result<f64> {
    let lattice = field.lattice();
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::validation("p must lie in (1, infinity)"));
    }
    let coeffs = haar_transform(f, lattice)?;
    let mut sq = vec![0.0f64; lattice.cell_count()];
    let mut failure: Option<Error> = None;
    coeffs.for_each(|cube, _sig, value| {
        if failure.is_some() {
            return;
        }
        match field.get(cube) {
            Ok(pair) => {
                let contrib = norm2(&pair.v.mat().mul_vec(value)).powi(2)
                    / lattice.cube_volume(cube.level);
                lattice.for_each_cell(cube, |cell| sq[cell] += contrib);
            }
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let vol = lattice.cell_volume();
    let total: f64 = sq.iter().map(|s| s.powf(p / 2.0) * vol).sum();
    Ok(total.powf(1.0 / p))
}
