//! Truncated action of a kernel on the constant function, paired with
//! Haar functions: near field from the dilated cube, far field from the
//! smoothness-compensated remainder up to a truncation radius, and the
//! weighted square-function norm of the resulting coefficient family.
//!
//! On the line the scalar factors integrate in closed form, so the d = 1
//! coefficients carry no quadrature error at all. In higher dimensions
//! the near field uses the cell grid and the far field a dyadic shell
//! quadrature whose step grows with the distance.

use super::{halfline_log_integral, KernelDescriptor, ScalarKernel};
use crate::dyadic::haar::{sig_count, HaarCoefficients, HaarSignature};
use crate::dyadic::{DyadicCube, DyadicLattice};
use crate::error::{Error, Result};
use crate::linalg::{op_norm, Mat};
use crate::weights::{MatrixWeight, ReducingField, ReducingMethod};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;
use std::sync::Arc;

/// Truncation depth so the remainder stays well under the coefficient
/// budget 10 * 2^(-level_max) for unit-norm matrix parts.
pub fn default_r_levels(level_max: usize) -> u32 {
    (level_max as u32).saturating_sub(2).max(4)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct T1Options {
    /// The constant source is truncated to the concentric dilate of the
    /// base cube with side 2^r_levels times the base side.
    pub r_levels: u32,
    /// Side ratio of the near-field cube around each I, default 2 sqrt(d).
    pub q_star_factor: f64,
}

impl T1Options {
    pub fn for_lattice(lattice: &DyadicLattice) -> Self {
        T1Options {
            r_levels: default_r_levels(lattice.level_max()),
            q_star_factor: 2.0 * (lattice.d() as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct T1Output {
    pub coeffs: HaarCoefficients<Mat>,
    /// Conservative far-field truncation bound, indexed by cube level.
    pub tail_bounds: Vec<f64>,
    pub max_coeff_norm: f64,
    pub r_levels: u32,
    pub q_star_factor: f64,
}

/// Continuous antiderivative of ln|t|, with Lambda(0) = 0, so iterated
/// integrals of 1/(x - y) over boxes stay finite through the diagonal
/// in the principal-value sense.
fn lambda(u: f64) -> f64 {
    if u == 0.0 {
        0.0
    } else {
        u * u.abs().ln() - u
    }
}

/// Exact double integral of 1/(x - y) over [a, b) x [u, v).
fn double_log_integral(a: f64, b: f64, u: f64, v: f64) -> f64 {
    lambda(b - u) - lambda(a - u) - lambda(b - v) + lambda(a - v)
}

/// Exact integral of ln|x - y0| over [a, b).
fn log_primitive(a: f64, b: f64, y0: f64) -> f64 {
    lambda(b - y0) - lambda(a - y0)
}

/// Pairing of the Haar coefficients of T applied to the truncated
/// constant source. Requires the unshifted lattice.
pub fn compute_t1(
    k: &KernelDescriptor,
    lattice: &Arc<DyadicLattice>,
    opts: &T1Options,
) -> Result<T1Output> {
    k.check_lattice(lattice)?;
    if opts.q_star_factor < 1.0 {
        return Err(Error::validation(
            "near-field dilation factor must be at least one",
        ));
    }
    if ((1u64 << opts.r_levels) as f64) < 1.0 + opts.q_star_factor {
        return Err(Error::validation(
            "truncation radius too small to contain every near-field cube",
        ));
    }
    let n = k.n();
    let mut coeffs = HaarCoefficients::zeros(lattice.clone(), &Mat::zeros(n))?;
    let lmax = lattice.level_max();
    let d = lattice.d();
    let big_s = (1u64 << opts.r_levels) as f64 * lattice.base_side();
    let sigs = HaarSignature::all(d);

    let mut max_norm = 0.0f64;
    for level in 0..lmax {
        let cubes = lattice.cubes_at_level(level);
        let rows: Vec<Result<Vec<Mat>>> = cubes
            .par_iter()
            .map(|cube| {
                sigs.iter()
                    .map(|&sig| t1_coefficient(k, lattice, cube, sig, opts, big_s))
                    .collect()
            })
            .collect();
        for (cube, row) in cubes.iter().zip(rows) {
            for (sig, value) in sigs.iter().zip(row?) {
                max_norm = max_norm.max(op_norm(&value));
                coeffs.set(cube, *sig, value)?;
            }
        }
    }
    let tail_bounds = (0..lmax)
        .map(|level| tail_bound(k, lattice.side_length(level), big_s))
        .collect();
    Ok(T1Output {
        coeffs,
        tail_bounds,
        max_coeff_norm: max_norm,
        r_levels: opts.r_levels,
        q_star_factor: opts.q_star_factor,
    })
}

fn t1_coefficient(
    k: &KernelDescriptor,
    lattice: &DyadicLattice,
    cube: &DyadicCube,
    sig: HaarSignature,
    opts: &T1Options,
    big_s: f64,
) -> Result<Mat> {
    let s = if lattice.d() == 1 {
        t1_scalar_exact_1d(k, lattice, cube, opts, big_s)
    } else {
        t1_scalar_quadrature(k, lattice, cube, sig, opts, big_s)
    };
    Ok(k.matrix().scale(s))
}

/// Closed-form scalar coefficient on the line. The principal-value part
/// integrates through Lambda; the source correction of the modified
/// kernel pairs to zero, while its adjoint contributes the exact
/// target-side term scaled by the truncation length.
fn t1_scalar_exact_1d(
    k: &KernelDescriptor,
    lattice: &DyadicLattice,
    cube: &DyadicCube,
    opts: &T1Options,
    big_s: f64,
) -> f64 {
    let a = lattice.cube_low(cube)[0];
    let len = lattice.side_length(cube.level);
    let b = a + len;
    let m = a + 0.5 * len;
    let scale = len.sqrt().recip();

    let q0 = m - 0.5 * opts.q_star_factor * len;
    let q1 = m + 0.5 * opts.q_star_factor * len;
    let m0 = lattice.base_origin()[0] + 0.5 * lattice.base_side();
    let e0 = m0 - 0.5 * big_s;
    let e1 = m0 + 0.5 * big_s;

    // <T 1_{Q*}, h_I> with both integrals exact.
    let near = double_log_integral(a, m, q0, q1) - double_log_integral(m, b, q0, q1);
    // Far field: the y-integral of 1/(x - y) over the two flanks leaves
    // log primitives in x; the compensation at the cube center is
    // constant in x and pairs to zero exactly.
    let far_half = |lo: f64, hi: f64| {
        log_primitive(lo, hi, e0) - log_primitive(lo, hi, q0) + log_primitive(lo, hi, q1)
            - log_primitive(lo, hi, e1)
    };
    let far = far_half(a, m) - far_half(m, b);

    let factor = match k.scalar() {
        ScalarKernel::Riesz { .. } => k.riesz_constant(),
        _ => 1.0,
    };
    let sign = if k.is_adjoint() { -1.0 } else { 1.0 };
    let mut s = sign * factor * scale * (near + far);
    if matches!(k.scalar(), ScalarKernel::ModifiedHilbert) && k.is_adjoint() {
        s += big_s * scale * (halfline_log_integral(a, m) - halfline_log_integral(m, b));
    }
    s
}

/// Cell-grid near field plus dyadic-shell far field for d >= 2. The
/// compensation term drops from the far field exactly because signed
/// cell sums of a Haar function vanish.
fn t1_scalar_quadrature(
    k: &KernelDescriptor,
    lattice: &DyadicLattice,
    cube: &DyadicCube,
    sig: HaarSignature,
    opts: &T1Options,
    big_s: f64,
) -> f64 {
    let d = lattice.d();
    let u = lattice.unit();
    let vol = lattice.cell_volume();
    let len = lattice.side_length(cube.level);
    let scale = lattice.cube_volume(cube.level).sqrt().recip();
    let center = lattice.cube_center(cube);
    let adjoint = k.is_adjoint();

    let x_cells: Vec<(usize, [f64; 3], f64)> = lattice
        .cube_cells(cube)
        .into_iter()
        .map(|cell| {
            let xc = lattice.cell_center(cell);
            let h = scale * super::cell_sign(lattice, cube, sig, cell);
            (cell, xc, h)
        })
        .collect();

    let q_half = 0.5 * opts.q_star_factor * len;
    let q_lo: Vec<f64> = (0..d).map(|a| center[a] - q_half).collect();
    let q_hi: Vec<f64> = (0..d).map(|a| center[a] + q_half).collect();
    let origin = lattice.base_origin();
    let m0: Vec<f64> = (0..d)
        .map(|a| origin[a] + 0.5 * lattice.base_side())
        .collect();
    let r_lo: Vec<f64> = (0..d).map(|a| m0[a] - 0.5 * big_s).collect();
    let r_hi: Vec<f64> = (0..d).map(|a| m0[a] + 0.5 * big_s).collect();

    let pv = |x: &[f64], y: &[f64]| {
        let (xa, ya) = if adjoint { (y, x) } else { (x, y) };
        k.pv_eval(xa, ya)
            .expect("quadrature points are off the diagonal")
    };

    // Near field over the extended cell grid covering Q*.
    let mut near = 0.0;
    {
        let ranges: Vec<(i64, i64)> = (0..d)
            .map(|a| {
                let lo = ((q_lo[a] - origin[a]) / u).floor() as i64;
                let hi = ((q_hi[a] - origin[a]) / u).ceil() as i64;
                (lo, hi)
            })
            .collect();
        let mut idx: Vec<i64> = ranges.iter().map(|r| r.0).collect();
        'outer: loop {
            let mut yc = [0.0f64; 3];
            let mut inside = true;
            for a in 0..d {
                yc[a] = origin[a] + (idx[a] as f64 + 0.5) * u;
                inside &= yc[a] >= q_lo[a] && yc[a] < q_hi[a];
            }
            if inside {
                for &(cell, ref xc, h) in &x_cells {
                    let axes = lattice.cell_axes(cell);
                    let same = (0..d).all(|a| axes[a] as i64 == idx[a]);
                    if same {
                        continue;
                    }
                    near += h * vol * pv(&xc[..d], &yc[..d]) * vol;
                }
            }
            for a in (0..d).rev() {
                idx[a] += 1;
                if idx[a] < ranges[a].1 {
                    continue 'outer;
                }
                idx[a] = ranges[a].0;
            }
            break;
        }
    }

    // Far field in shells doubling away from the cube, step growing with
    // the shell radius.
    let mut far = 0.0;
    let t_max = (0..d).fold(0.0f64, |m, a| {
        m.max((center[a] - r_lo[a]).abs()).max((r_hi[a] - center[a]).abs())
    });
    let mut t = q_half;
    while t < t_max {
        let t_hi = 2.0 * t;
        let mut step = u;
        while step * 16.0 <= t {
            step *= 2.0;
        }
        let w = step.powi(d as i32);
        let ranges: Vec<(i64, i64)> = (0..d)
            .map(|a| {
                let lo = ((center[a] - t_hi - origin[a]) / step).floor() as i64;
                let hi = ((center[a] + t_hi - origin[a]) / step).ceil() as i64;
                (lo, hi)
            })
            .collect();
        let mut idx: Vec<i64> = ranges.iter().map(|r| r.0).collect();
        'shell: loop {
            let mut yc = [0.0f64; 3];
            let mut max_dist = 0.0f64;
            let mut in_r = true;
            let mut in_q = true;
            for a in 0..d {
                yc[a] = origin[a] + (idx[a] as f64 + 0.5) * step;
                max_dist = max_dist.max((yc[a] - center[a]).abs());
                in_r &= yc[a] >= r_lo[a] && yc[a] < r_hi[a];
                in_q &= yc[a] >= q_lo[a] && yc[a] < q_hi[a];
            }
            if max_dist >= t && max_dist < t_hi && in_r && !in_q {
                let mut acc = 0.0;
                for &(_, ref xc, h) in &x_cells {
                    acc += h * vol * pv(&xc[..d], &yc[..d]);
                }
                far += w * acc;
            }
            for a in (0..d).rev() {
                idx[a] += 1;
                if idx[a] < ranges[a].1 {
                    continue 'shell;
                }
                idx[a] = ranges[a].0;
            }
            break;
        }
        t = t_hi;
    }
    near + far
}

/// Conservative remainder bound for the discarded far field, from the
/// gradient estimate of the scalar factor. The effective radius is taken
/// as a quarter of the truncation side to absorb off-center cubes.
fn tail_bound(k: &KernelDescriptor, len: f64, big_s: f64) -> f64 {
    let d = k.d() as f64;
    let alpha = k.alpha();
    let omega = match k.d() {
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 4.0 * PI,
    };
    let c_grad = match k.scalar() {
        ScalarKernel::Riesz { .. } => k.riesz_constant() * (d + 2.0),
        _ => 1.0,
    };
    op_norm(k.matrix())
        * c_grad
        * (d.sqrt() * 0.5 * len).powf(alpha)
        * len.powf(0.5 * d)
        * omega
        * 2.0f64.powf(d + alpha)
        / alpha
        * (0.25 * big_s).powf(-alpha)
}

/// Weighted square-function norm of a matrix coefficient family: the
/// supremum over cubes I0 of the average over I0 of
/// (sum over Q inside I0 of ||V_Q M_Q V_I0^{-1}||^2 / |Q| on Q)^{p/2},
/// reported as its p-th root so the value is linear in the family.
pub fn t1_bmo_norm(
    coeffs: &HaarCoefficients<Mat>,
    w: &MatrixWeight,
    p: f64,
    method: ReducingMethod,
) -> Result<f64> {
    if !coeffs.lattice().same_mesh(w.lattice()) {
        return Err(Error::validation(
            "mismatched lattice handles between coefficients and weight",
        ));
    }
    let field = ReducingField::compute(w, coeffs.lattice(), p, method)?;
    t1_bmo_norm_with_field(coeffs, &field)
}

pub fn t1_bmo_norm_with_field(
    coeffs: &HaarCoefficients<Mat>,
    field: &ReducingField,
) -> Result<f64> {
    let lattice = field.lattice().clone();
    if !coeffs.lattice().same_mesh(&lattice) || !lattice.is_unshifted() {
        return Err(Error::validation(
            "coefficient norms need the unshifted lattice of the coefficients",
        ));
    }
    let lmax = lattice.level_max();
    if lmax == 0 {
        return Ok(0.0);
    }
    let d = lattice.d();
    let p = field.p();
    let sc = sig_count(d);
    let sigs = HaarSignature::all(d);

    let mut best = 0.0f64;
    for l0 in 0..lmax {
        let cubes0 = lattice.cubes_at_level(l0);
        let vals: Vec<Result<f64>> = cubes0
            .par_iter()
            .map(|i0| subtree_mass(coeffs, field, &lattice, i0, p, sc, &sigs))
            .collect();
        for v in vals {
            best = best.max(v?);
        }
    }
    Ok(best.powf(1.0 / p))
}

/// Average over I0 of the p/2 power of the accumulated square masses.
fn subtree_mass(
    coeffs: &HaarCoefficients<Mat>,
    field: &ReducingField,
    lattice: &DyadicLattice,
    i0: &DyadicCube,
    p: f64,
    sc: usize,
    sigs: &[HaarSignature],
) -> Result<f64> {
    let d = lattice.d();
    let lmax = lattice.level_max();
    let v0_inv = field.get(i0)?.v.inverse().into_mat();
    let mass = |cube: &DyadicCube| -> Result<f64> {
        let vq = field.get(cube)?.v.mat().clone();
        let inv_vol = lattice.cube_volume(cube.level).recip();
        let mut acc = 0.0;
        for s in 0..sc {
            let m = coeffs
                .get(cube, sigs[s])
                .ok_or_else(|| Error::validation("coefficient address outside lattice"))?;
            let conj = vq.mul(m).mul(&v0_inv);
            let nrm = op_norm(&conj);
            acc += nrm * nrm * inv_vol;
        }
        Ok(acc)
    };

    // Running sums down the subtree, locals in axis-0-slowest order.
    let mut running: Vec<f64> = vec![mass(i0)?];
    for level in i0.level + 1..lmax {
        let gap = level - i0.level;
        let side = 1usize << gap;
        let count = side.pow(d as u32);
        let mut next = vec![0.0f64; count];
        for local in 0..count {
            let mut offs = [0usize; 3];
            let mut rem = local;
            for axis in (0..d).rev() {
                offs[axis] = rem % side;
                rem /= side;
            }
            let mut coords = [0i64; 3];
            let mut parent_local = 0usize;
            for axis in 0..d {
                coords[axis] = i0.coords[axis] * (side as i64) + offs[axis] as i64;
                parent_local = parent_local * (side / 2) + offs[axis] / 2;
            }
            let cube = DyadicCube { level, coords };
            next[local] = running[parent_local] + mass(&cube)?;
        }
        running = next;
    }
    let leaf_count = running.len() as f64;
    Ok(running.iter().map(|g| g.powf(0.5 * p)).sum::<f64>() / leaf_count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::haar::haar_eval;

    fn hilbert_id(n: usize) -> KernelDescriptor {
        KernelDescriptor::hilbert(Mat::identity(n))
    }

    #[test]
    fn default_truncation_depth_tracks_level() {
        assert_eq!(default_r_levels(8), 6);
        assert_eq!(default_r_levels(12), 10);
        assert_eq!(default_r_levels(3), 4);
    }

    #[test]
    fn convolution_coefficients_are_truncation_remainders() {
        let lattice = Arc::new(DyadicLattice::standard(1, 6).unwrap());
        let opts = T1Options::for_lattice(&lattice);
        let out = compute_t1(&hilbert_id(2), &lattice, &opts).unwrap();
        let remainder = 2.0f64.powi(-(opts.r_levels as i32));
        assert!(out.max_coeff_norm <= 1.1 * remainder, "{}", out.max_coeff_norm);
        assert!(out.max_coeff_norm >= 0.5 * remainder, "{}", out.max_coeff_norm);
        assert!(out.tail_bounds[0] >= out.max_coeff_norm);
    }

    #[test]
    fn line_coefficients_match_the_log_ratio_oracle() {
        // For the truncated constant source the target function is
        // ln((x - e0)/(e1 - x)); pair it numerically per half.
        let lattice = Arc::new(DyadicLattice::standard(1, 5).unwrap());
        let opts = T1Options { r_levels: 5, q_star_factor: 2.0 };
        let out = compute_t1(&hilbert_id(1), &lattice, &opts).unwrap();
        let e0 = 0.5 - 16.0;
        let e1 = 0.5 + 16.0;
        let sig = HaarSignature::all(1)[0];
        for cube in [
            DyadicCube { level: 0, coords: [0, 0, 0] },
            DyadicCube { level: 2, coords: [1, 0, 0] },
            DyadicCube { level: 4, coords: [13, 0, 0] },
        ] {
            let len = lattice.side_length(cube.level);
            let lo = lattice.cube_low(&cube)[0];
            let m = 4096usize;
            let step = len / m as f64;
            let mut oracle = 0.0;
            for i in 0..m {
                let x = lo + (i as f64 + 0.5) * step;
                let g = ((x - e0) / (e1 - x)).ln();
                let h = haar_eval(&lattice, &cube, sig, &[x]).unwrap();
                oracle += g * h * step;
            }
            let got = out.coeffs.get(&cube, sig).unwrap().get(0, 0);
            assert!(
                (got - oracle).abs() < 1e-8,
                "level {}: {} vs {}",
                cube.level,
                got,
                oracle
            );
        }
    }

    #[test]
    fn modified_kernel_matches_hilbert_coefficients() {
        let lattice = Arc::new(DyadicLattice::with_base(1, 5, &[-2.0], 2).unwrap());
        let opts = T1Options { r_levels: 4, q_star_factor: 2.0 };
        let a = Mat::from_rows(&[vec![1.0, 1.0], vec![0.0, 2.0]]).unwrap();
        let plain = compute_t1(&KernelDescriptor::hilbert(a.clone()), &lattice, &opts).unwrap();
        let modified =
            compute_t1(&KernelDescriptor::modified_hilbert(a), &lattice, &opts).unwrap();
        plain.coeffs.for_each(|cube, sig, v| {
            let m = modified.coeffs.get(cube, sig).unwrap();
            assert!(v.sub(m).max_abs() < 1e-12);
        });
    }

    #[test]
    fn riesz_on_the_line_is_the_scaled_hilbert_transform() {
        let lattice = Arc::new(DyadicLattice::standard(1, 4).unwrap());
        let opts = T1Options::for_lattice(&lattice);
        let a = Mat::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let h = compute_t1(&KernelDescriptor::hilbert(a.clone()), &lattice, &opts).unwrap();
        let r = compute_t1(
            &KernelDescriptor::riesz(1, 1, a).unwrap(),
            &lattice,
            &opts,
        )
        .unwrap();
        h.coeffs.for_each(|cube, sig, v| {
            let m = r.coeffs.get(cube, sig).unwrap();
            assert!(v.scale(1.0 / PI).sub(m).max_abs() < 1e-12);
        });
    }

    #[test]
    fn coefficients_are_linear_in_the_matrix_part() {
        let lattice = Arc::new(DyadicLattice::standard(1, 4).unwrap());
        let opts = T1Options::for_lattice(&lattice);
        let a1 = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let a2 = Mat::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let sum = a1.add(&a2);
        let o1 = compute_t1(&KernelDescriptor::hilbert(a1), &lattice, &opts).unwrap();
        let o2 = compute_t1(&KernelDescriptor::hilbert(a2), &lattice, &opts).unwrap();
        let os = compute_t1(&KernelDescriptor::hilbert(sum), &lattice, &opts).unwrap();
        os.coeffs.for_each(|cube, sig, v| {
            let lhs = o1.coeffs.get(cube, sig).unwrap().add(o2.coeffs.get(cube, sig).unwrap());
            assert!(v.sub(&lhs).max_abs() < 1e-12);
        });
    }

    #[test]
    fn adjoint_of_an_odd_kernel_negates_the_coefficients() {
        let lattice = Arc::new(DyadicLattice::standard(1, 4).unwrap());
        let opts = T1Options::for_lattice(&lattice);
        let a = Mat::from_rows(&[vec![1.0, 3.0], vec![0.0, 2.0]]).unwrap();
        let k = KernelDescriptor::hilbert(a);
        let fwd = compute_t1(&k, &lattice, &opts).unwrap();
        let adj = compute_t1(&k.adjoint(), &lattice, &opts).unwrap();
        fwd.coeffs.for_each(|cube, sig, v| {
            let m = adj.coeffs.get(cube, sig).unwrap();
            assert!(v.transpose().scale(-1.0).sub(m).max_abs() < 1e-12);
        });
    }

    #[test]
    fn planar_riesz_coefficients_stay_small() {
        let lattice = Arc::new(DyadicLattice::standard(2, 3).unwrap());
        let opts = T1Options { r_levels: 4, q_star_factor: 2.0 * 2.0f64.sqrt() };
        let k = KernelDescriptor::riesz(1, 2, Mat::identity(1)).unwrap();
        let out = compute_t1(&k, &lattice, &opts).unwrap();
        assert!(out.max_coeff_norm < 0.1, "{}", out.max_coeff_norm);
    }

    #[test]
    fn square_norm_matches_a_naive_rebuild_for_scalars() {
        let lattice = Arc::new(DyadicLattice::standard(1, 4).unwrap());
        let w = MatrixWeight::identity(lattice.clone(), 1);
        let opts = T1Options::for_lattice(&lattice);
        let out = compute_t1(&hilbert_id(1), &lattice, &opts).unwrap();
        let got = t1_bmo_norm(&out.coeffs, &w, 2.0, ReducingMethod::Auto).unwrap();

        let sig = HaarSignature::all(1)[0];
        let mut best = 0.0f64;
        for l0 in 0..lattice.level_max() {
            for i0 in lattice.cubes_at_level(l0) {
                let cells = lattice.cube_cells(&i0);
                let mut acc = 0.0;
                for &cell in &cells {
                    let mut g = 0.0;
                    for level in l0..lattice.level_max() {
                        let q = lattice.cube_of_cell(level, cell).unwrap();
                        let s = out.coeffs.get(&q, sig).unwrap().get(0, 0);
                        g += s * s / lattice.cube_volume(level);
                    }
                    acc += g;
                }
                best = best.max(acc / cells.len() as f64);
            }
        }
        assert!((got - best.sqrt()).abs() < 1e-12, "{got} vs {}", best.sqrt());
    }

    #[test]
    fn square_norm_is_homogeneous_in_the_family() {
        let lattice = Arc::new(DyadicLattice::standard(1, 4).unwrap());
        let w = MatrixWeight::power1d(lattice.clone(), &[0.4, -0.3]).unwrap();
        let opts = T1Options::for_lattice(&lattice);
        let out = compute_t1(&hilbert_id(2), &lattice, &opts).unwrap();
        let base = t1_bmo_norm(&out.coeffs, &w, 3.0, ReducingMethod::Auto).unwrap();
        let scaled = out.coeffs.map(|m| m.scale(5.0));
        let five = t1_bmo_norm(&scaled, &w, 3.0, ReducingMethod::Auto).unwrap();
        assert!((five - 5.0 * base).abs() < 1e-9 * base.max(1.0));
    }
}
