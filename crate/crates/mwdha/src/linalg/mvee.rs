//! Minimum-volume enclosing ellipsoid of a symmetric point set,
//! by Khachiyan's barycentric coordinate-descent.
//!
//! The point set is assumed symmetric under negation (the caller
//! enforces this), so the ellipsoid is centered at the origin and the
//! iteration runs on the shape matrix alone: maximize log det X over
//! X = sum_i u_i p_i p_i^T with u in the simplex. The duality gap
//! kappa/n - 1 (kappa = max_i p_i^T X^{-1} p_i) certifies the volume
//! ratio against the optimum.

use super::{sym_eig, Mat, SpdMatrix, EIG_FLOOR_REL};
use crate::error::{Error, Result};

pub const MVEE_MAX_ITERATIONS: usize = 100_000;

/// Result of an ellipsoid fit: `{x : |shape x| <= 1}` encloses the inputs.
#[derive(Debug, Clone)]
pub struct EllipsoidFit {
    pub shape: SpdMatrix,
    pub iterations: usize,
    pub gap: f64,
}

/// Fit the minimum-volume origin-centered ellipsoid enclosing `points`.
///
/// Terminates when the duality gap drops to `tol`; every input point
/// then satisfies `|shape . p| <= 1` up to rounding, and the volume is
/// within a `(1 + tol)^(n/2)` factor of optimal.
pub fn mvee(points: &[Vec<f64>], tol: f64) -> Result<EllipsoidFit> {
    if points.is_empty() {
        return Err(Error::validation("mvee needs at least one point"));
    }
    if !(tol > 0.0) {
        return Err(Error::validation("mvee tolerance must be positive"));
    }
    let n = points[0].len();
    if n == 0 || points.iter().any(|p| p.len() != n) {
        return Err(Error::validation("mvee points must share a positive dimension"));
    }
    let m = points.len();

    let mut u = vec![1.0 / m as f64; m];
    let mut x = shape_from_weights(points, &u, n);
    let mut xinv = invert_checked(&x)?;
    // g_i = p_i^T X^{-1} p_i, maintained incrementally.
    let mut g: Vec<f64> = points.iter().map(|p| quad_form(&xinv, p)).collect();

    let nf = n as f64;
    let mut iterations = 0;
    let mut gap = f64::INFINITY;
    while iterations < MVEE_MAX_ITERATIONS {
        let (j_plus, kappa_plus) = argmax(&g);
        let (j_minus, kappa_minus) = argmin_support(&g, &u);
        let eps_plus = kappa_plus / nf - 1.0;
        let eps_minus = 1.0 - kappa_minus / nf;
        gap = eps_plus;
        // The primal criterion alone certifies enclosure within (1+tol)
        // and volume within (1+tol)^(n/2) of optimal; the away steps
        // below only accelerate it.
        if eps_plus <= tol {
            break;
        }
        iterations += 1;
        // Wolfe-Atwood step choice: add weight at the worst outer point or
        // shed weight from the most over-represented support point,
        // whichever violation is larger.
        let (j, kappa, away) = if eps_plus >= eps_minus {
            (j_plus, kappa_plus, false)
        } else {
            (j_minus, kappa_minus, true)
        };
        let beta = if away {
            let beta_min = -u[j] / (1.0 - u[j]);
            if kappa <= 1.0 {
                beta_min
            } else {
                ((kappa - nf) / (nf * (kappa - 1.0))).max(beta_min)
            }
        } else {
            (kappa - nf) / (nf * (kappa - 1.0))
        };
        for (ui, pi) in u.iter_mut().zip(0..m) {
            *ui *= 1.0 - beta;
            if pi == j {
                *ui += beta;
            }
            if *ui < 1e-18 {
                *ui = 0.0;
            }
        }
        if iterations % 128 == 0 {
            // Periodic refactor to shed Sherman-Morrison drift.
            x = shape_from_weights(points, &u, n);
            xinv = invert_checked(&x)?;
            for (gi, p) in g.iter_mut().zip(points) {
                *gi = quad_form(&xinv, p);
            }
        } else {
            // X' = (1-beta) X + beta p_j p_j^T; update the inverse and the
            // quadratic forms by one rank-one correction.
            let gamma = beta / (1.0 - beta);
            let pj = &points[j];
            let v = xinv.mul_vec(pj); // X^{-1} p_j
            let denom = 1.0 + gamma * g[j];
            let scale = 1.0 / (1.0 - beta);
            let coef = gamma / denom * scale;
            let nn = xinv.n();
            for r in 0..nn {
                for c in 0..nn {
                    let val = scale * xinv.get(r, c) - coef * v[r] * v[c];
                    xinv.set(r, c, val);
                }
            }
            for (gi, p) in g.iter_mut().zip(points) {
                let w = dot_slice(p, &v);
                *gi = scale * (*gi) - coef * w * w;
            }
        }
    }
    if gap > tol {
        return Err(Error::resource(format!(
            "mvee iteration cap {MVEE_MAX_ITERATIONS} reached with duality gap {gap:.3e}"
        )));
    }

    // Final shape from a fresh factorization of the converged weights.
    x = shape_from_weights(points, &u, n);
    xinv = invert_checked(&x)?;
    let kappa = points
        .iter()
        .map(|p| quad_form(&xinv, p))
        .fold(0.0_f64, f64::max);
    let shape = SpdMatrix::new(xinv.scale(1.0 / kappa).symmetrized())?.sqrt();
    Ok(EllipsoidFit { shape, iterations, gap })
}

fn dot_slice(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn argmax(g: &[f64]) -> (usize, f64) {
    let mut j = 0;
    let mut best = g[0];
    for (i, &v) in g.iter().enumerate() {
        if v > best {
            best = v;
            j = i;
        }
    }
    (j, best)
}

fn argmin_support(g: &[f64], u: &[f64]) -> (usize, f64) {
    let mut j = usize::MAX;
    let mut best = f64::INFINITY;
    for (i, (&v, &w)) in g.iter().zip(u).enumerate() {
        if w > 0.0 && v < best {
            best = v;
            j = i;
        }
    }
    (j, best)
}

fn shape_from_weights(points: &[Vec<f64>], u: &[f64], n: usize) -> Mat {
    let mut x = Mat::zeros(n);
    for (p, &w) in points.iter().zip(u) {
        if w == 0.0 {
            continue;
        }
        for r in 0..n {
            let wr = w * p[r];
            if wr == 0.0 {
                continue;
            }
            for c in 0..n {
                let val = x.get(r, c) + wr * p[c];
                x.set(r, c, val);
            }
        }
    }
    x.symmetrized()
}

fn quad_form(m: &Mat, p: &[f64]) -> f64 {
    dot_slice(p, &m.mul_vec(p))
}

fn invert_checked(x: &Mat) -> Result<Mat> {
    let (vals, q) = sym_eig(x)?;
    let floor = EIG_FLOOR_REL * vals[0].max(0.0);
    if let Some(bad) = vals.iter().find(|&&v| v <= floor) {
        return Err(Error::validation(format!(
            "degenerate point set: scatter matrix eigenvalue {bad:.6e} at or below floor {floor:.6e}"
        )));
    }
    let n = x.n();
    let mut out = Mat::zeros(n);
    for k in 0..n {
        let lk = 1.0 / vals[k];
        for i in 0..n {
            let qik = q.get(i, k);
            if qik == 0.0 {
                continue;
            }
            for j in 0..n {
                let v = out.get(i, j) + lk * qik * q.get(j, k);
                out.set(i, j, v);
            }
        }
    }
    Ok(out.symmetrized())
}
