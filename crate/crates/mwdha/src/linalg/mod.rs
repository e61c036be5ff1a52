//! Dense linear algebra for small symmetric matrices.
//!
//! Everything here targets n <= 16: cyclic Jacobi eigendecomposition,
//! fractional powers of symmetric positive definite matrices, operator
//! norms, and a minimum-volume enclosing ellipsoid fit. Degenerate inputs
//! produce errors naming the offending quantity; nothing is regularized.

mod mvee;

pub use mvee::{mvee, EllipsoidFit};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Relative eigenvalue floor: eigenvalues at or below
/// `EIG_FLOOR_REL * lambda_max` count as singular.
pub const EIG_FLOOR_REL: f64 = 1e-12;

/// Jacobi convergence: off-diagonal Frobenius mass below
/// `JACOBI_TOL_REL * frobenius(M)`.
pub const JACOBI_TOL_REL: f64 = 1e-13;

const JACOBI_MAX_SWEEPS: usize = 64;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Square matrix, row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    n: usize,
    a: Vec<f64>,
}

impl Mat {
    pub fn zeros(n: usize) -> Self {
        Mat { n, a: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n);
        for i in 0..n {
            m.a[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(d: &[f64]) -> Self {
        let n = d.len();
        let mut m = Mat::zeros(n);
        for i in 0..n {
            m.a[i * n + i] = d[i];
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::validation("matrix must have at least one row"));
        }
        let mut a = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::validation(format!(
                    "matrix must be square: {} rows but a row of length {}",
                    n,
                    row.len()
                )));
            }
            a.extend_from_slice(row);
        }
        Ok(Mat { n, a })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[f64] {
        &self.a
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.n + j] = v;
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| self.a[i * self.n..(i + 1) * self.n].to_vec())
            .collect()
    }

    pub fn transpose(&self) -> Mat {
        let n = self.n;
        let mut t = Mat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                t.a[j * n + i] = self.a[i * n + j];
            }
        }
        t
    }

    pub fn mul(&self, other: &Mat) -> Mat {
        assert_eq!(self.n, other.n, "dimension mismatch in matrix product");
        let n = self.n;
        let mut out = Mat::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let aik = self.a[i * n + k];
                if aik == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.a[i * n + j] += aik * other.a[k * n + j];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.n, v.len(), "dimension mismatch in matrix-vector product");
        let n = self.n;
        let mut out = vec![0.0; n];
        for i in 0..n {
            out[i] = dot(&self.a[i * n..(i + 1) * n], v);
        }
        out
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!(self.n, other.n);
        let a = self.a.iter().zip(&other.a).map(|(x, y)| x + y).collect();
        Mat { n: self.n, a }
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!(self.n, other.n);
        let a = self.a.iter().zip(&other.a).map(|(x, y)| x - y).collect();
        Mat { n: self.n, a }
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat { n: self.n, a: self.a.iter().map(|x| x * s).collect() }
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for x in self.a.iter_mut() {
            *x *= s;
        }
    }

    /// self += c * other
    pub fn axpy(&mut self, other: &Mat, c: f64) {
        assert_eq!(self.n, other.n);
        for (x, y) in self.a.iter_mut().zip(&other.a) {
            *x += c * y;
        }
    }

    pub fn frobenius(&self) -> f64 {
        self.a.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.a[i * self.n + i]).sum()
    }

    pub fn symmetry_defect(&self) -> f64 {
        let n = self.n;
        let mut d = 0.0_f64;
        for i in 0..n {
            for j in (i + 1)..n {
                d = d.max((self.a[i * n + j] - self.a[j * n + i]).abs());
            }
        }
        d
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetry_defect() <= 1e-12 * self.max_abs().max(1e-300)
    }

    /// (M + M^T)/2; collapses rounding asymmetry before eigendecomposition.
    pub fn symmetrized(&self) -> Mat {
        let n = self.n;
        let mut s = self.clone();
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (self.a[i * n + j] + self.a[j * n + i]);
                s.a[i * n + j] = v;
                s.a[j * n + i] = v;
            }
        }
        s
    }
}

impl Serialize for Mat {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mat {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Mat::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and an orthogonal `Q` whose
/// columns are the matching eigenvectors, so `M = Q diag(vals) Q^T`.
pub fn sym_eig(m: &Mat) -> Result<(Vec<f64>, Mat)> {
    if !m.is_symmetric() {
        return Err(Error::validation(format!(
            "matrix is not symmetric (defect {:.3e})",
            m.symmetry_defect()
        )));
    }
    let n = m.n;
    let mut a = m.symmetrized();
    let mut q = Mat::identity(n);
    let scale = a.frobenius();
    let tol = JACOBI_TOL_REL * scale;

    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0_f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a.get(i, j) * a.get(i, j);
            }
        }
        if (2.0 * off).sqrt() <= tol || scale == 0.0 {
            let mut pairs: Vec<(f64, usize)> =
                (0..n).map(|i| (a.get(i, i), i)).collect();
            pairs.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap());
            let vals: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let mut qs = Mat::zeros(n);
            for (new_col, &(_, old_col)) in pairs.iter().enumerate() {
                for r in 0..n {
                    qs.set(r, new_col, q.get(r, old_col));
                }
            }
            return Ok((vals, qs));
        }
        for p in 0..n {
            for r in (p + 1)..n {
                let apr = a.get(p, r);
                if apr.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a.get(r, r) - a.get(p, p)) / (2.0 * apr);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // Rotate rows/columns p and r of `a`.
                let app = a.get(p, p);
                let arr = a.get(r, r);
                a.set(p, p, app - t * apr);
                a.set(r, r, arr + t * apr);
                a.set(p, r, 0.0);
                a.set(r, p, 0.0);
                for k in 0..n {
                    if k != p && k != r {
                        let akp = a.get(k, p);
                        let akr = a.get(k, r);
                        a.set(k, p, c * akp - s * akr);
                        a.set(p, k, c * akp - s * akr);
                        a.set(k, r, s * akp + c * akr);
                        a.set(r, k, s * akp + c * akr);
                    }
                }
                for k in 0..n {
                    let qkp = q.get(k, p);
                    let qkr = q.get(k, r);
                    q.set(k, p, c * qkp - s * qkr);
                    q.set(k, r, s * qkp + c * qkr);
                }
            }
        }
    }
    Err(Error::validation(
        "jacobi eigendecomposition failed to converge".to_string(),
    ))
}

/// Largest singular value of a square matrix.
pub fn op_norm(m: &Mat) -> f64 {
    let n = m.n;
    if n == 1 {
        return m.get(0, 0).abs();
    }
    if n == 2 {
        // Closed form: sigma_max^2 = (e + sqrt(e^2 - 4 det^2)) / 2
        // with e the squared Frobenius norm.
        let e = m.a.iter().map(|x| x * x).sum::<f64>();
        let det = m.get(0, 0) * m.get(1, 1) - m.get(0, 1) * m.get(1, 0);
        let disc = (e * e - 4.0 * det * det).max(0.0);
        return ((e + disc.sqrt()) * 0.5).sqrt();
    }
    let gram = m.transpose().mul(m).symmetrized();
    let (vals, _) = sym_eig(&gram).expect("gram matrix is symmetric by construction");
    vals[0].max(0.0).sqrt()
}

/// Symmetric positive definite matrix. Construction validates symmetry and
/// checks every eigenvalue against the relative floor.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct SpdMatrix {
    m: Mat,
}

impl SpdMatrix {
    pub fn new(m: Mat) -> Result<Self> {
        let (vals, _) = sym_eig(&m)?;
        let floor = EIG_FLOOR_REL * vals[0].max(0.0);
        if let Some(bad) = vals.iter().find(|&&v| v <= floor) {
            return Err(Error::singular(format!(
                "matrix is not positive definite: eigenvalue {bad:.6e} at or below floor {floor:.6e}"
            )));
        }
        Ok(SpdMatrix { m })
    }

    pub fn identity(n: usize) -> Self {
        SpdMatrix { m: Mat::identity(n) }
    }

    pub fn mat(&self) -> &Mat {
        &self.m
    }

    pub fn into_mat(self) -> Mat {
        self.m
    }

    pub fn n(&self) -> usize {
        self.m.n()
    }

    pub fn eig(&self) -> (Vec<f64>, Mat) {
        sym_eig(&self.m).expect("SpdMatrix is symmetric by construction")
    }

    /// `M^t` through the eigendecomposition, `Q diag(vals^t) Q^T`.
    pub fn power(&self, t: f64) -> Result<SpdMatrix> {
        let (vals, q) = self.eig();
        let floor = EIG_FLOOR_REL * vals[0].max(0.0);
        for &v in &vals {
            if v <= floor {
                return Err(Error::singular(format!(
                    "cannot raise to power {t}: eigenvalue {v:.6e} at or below floor {floor:.6e}"
                )));
            }
        }
        let n = self.n();
        let mut out = Mat::zeros(n);
        for k in 0..n {
            let lk = vals[k].powf(t);
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
        Ok(SpdMatrix { m: out.symmetrized() })
    }

    pub fn sqrt(&self) -> SpdMatrix {
        self.power(0.5).expect("SPD matrices have strictly positive spectrum")
    }

    pub fn inverse(&self) -> SpdMatrix {
        self.power(-1.0).expect("SPD matrices have strictly positive spectrum")
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.m.mul_vec(v)
    }

    pub fn op_norm(&self) -> f64 {
        let (vals, _) = self.eig();
        vals[0]
    }
}

impl<'de> Deserialize<'de> for SpdMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = Mat::deserialize(d)?;
        SpdMatrix::new(m).map_err(serde::de::Error::custom)
    }
}

/// Convenience: `spd_power(M, t)` as a free function.
pub fn spd_power(m: &SpdMatrix, t: f64) -> Result<SpdMatrix> {
    m.power(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat2(a: f64, b: f64, c: f64, d: f64) -> Mat {
        Mat::from_rows(&[vec![a, b], vec![c, d]]).unwrap()
    }

    fn assert_mat_close(m: &Mat, rows: &[Vec<f64>], tol: f64) {
        for i in 0..m.n() {
            for j in 0..m.n() {
                assert!(
                    (m.get(i, j) - rows[i][j]).abs() <= tol,
                    "entry ({i},{j}): {} vs {}",
                    m.get(i, j),
                    rows[i][j]
                );
            }
        }
    }

    #[test]
    fn sym_eig_identity() {
        let (vals, q) = sym_eig(&Mat::identity(2)).unwrap();
        assert_eq!(vals, vec![1.0, 1.0]);
        assert_mat_close(&q.mul(&q.transpose()), &Mat::identity(2).rows(), 1e-14);
    }

    #[test]
    fn sym_eig_diagonal_sorted_descending() {
        let (vals, _) = sym_eig(&Mat::diag(&[1.0, 4.0])).unwrap();
        assert_eq!(vals, vec![4.0, 1.0]);
    }

    #[test]
    fn sym_eig_two_by_two_oracle() {
        // Eigenvalues of [[2,1],[1,2]] are 3 and 1.
        let (vals, q) = sym_eig(&mat2(2.0, 1.0, 1.0, 2.0)).unwrap();
        assert!((vals[0] - 3.0).abs() < 1e-12);
        assert!((vals[1] - 1.0).abs() < 1e-12);
        // Reconstruct Q diag Q^T.
        let lam = Mat::diag(&vals);
        let rec = q.mul(&lam).mul(&q.transpose());
        assert_mat_close(&rec, &[vec![2.0, 1.0], vec![1.0, 2.0]], 1e-12);
    }

    #[test]
    fn sym_eig_rejects_non_symmetric() {
        assert!(matches!(
            sym_eig(&mat2(0.0, 1.0, 0.0, 0.0)),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn sym_eig_zero_matrix() {
        let (vals, _) = sym_eig(&Mat::zeros(3)).unwrap();
        assert_eq!(vals, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn sym_eig_off_diagonal_converged_below_threshold() {
        let m = Mat::from_rows(&[
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, 0.25],
            vec![0.5, 0.25, 2.0],
        ])
        .unwrap();
        let (vals, q) = sym_eig(&m).unwrap();
        let rec = q.mul(&Mat::diag(&vals)).mul(&q.transpose());
        assert!(rec.sub(&m).max_abs() < 1e-12 * m.frobenius());
        // Q orthogonal.
        assert!(q.mul(&q.transpose()).sub(&Mat::identity(3)).max_abs() < 1e-13);
    }

    #[test]
    fn spd_power_half_of_diagonal() {
        let m = SpdMatrix::new(Mat::diag(&[4.0, 9.0])).unwrap();
        let r = m.power(0.5).unwrap();
        assert_mat_close(r.mat(), &[vec![2.0, 0.0], vec![0.0, 3.0]], 1e-12);
    }

    #[test]
    fn spd_power_inverse_oracle() {
        // [[2,1],[1,2]]^{-1} = [[2/3,-1/3],[-1/3,2/3]].
        let m = SpdMatrix::new(mat2(2.0, 1.0, 1.0, 2.0)).unwrap();
        let r = m.power(-1.0).unwrap();
        let e = 1.0 / 3.0;
        assert_mat_close(r.mat(), &[vec![2.0 * e, -e], vec![-e, 2.0 * e]], 1e-12);
    }

    #[test]
    fn spd_power_one_is_identity_map() {
        let m = SpdMatrix::new(mat2(2.0, 0.5, 0.5, 1.0)).unwrap();
        let r = m.power(1.0).unwrap();
        assert!(r.mat().sub(m.mat()).max_abs() < 1e-10);
        let z = m.power(0.0).unwrap();
        assert_mat_close(z.mat(), &Mat::identity(2).rows(), 1e-12);
    }

    #[test]
    fn spd_powers_compose() {
        let m = SpdMatrix::new(mat2(3.0, 1.0, 1.0, 2.0)).unwrap();
        let half = m.power(0.5).unwrap();
        let rec = half.mat().mul(half.mat());
        assert!(rec.sub(m.mat()).max_abs() < 1e-12);
        let inv = m.power(-1.0).unwrap();
        let prod = inv.mat().mul(m.mat());
        assert!(prod.sub(&Mat::identity(2)).max_abs() < 1e-12);
    }

    #[test]
    fn spd_rejects_eigenvalue_at_floor() {
        let err = SpdMatrix::new(Mat::diag(&[1.0, 1e-15])).unwrap_err();
        match err {
            Error::Singular(msg) => assert!(msg.contains("1e-15") || msg.contains("e-15")),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn spd_rejects_indefinite() {
        assert!(SpdMatrix::new(Mat::diag(&[2.0, -5.0])).is_err());
    }

    #[test]
    fn op_norm_oracles() {
        assert!((op_norm(&Mat::diag(&[2.0, -5.0])) - 5.0).abs() < 1e-12);
        // Nilpotent [[0,1],[0,0]] has operator norm 1.
        assert!((op_norm(&mat2(0.0, 1.0, 0.0, 0.0)) - 1.0).abs() < 1e-14);
        assert_eq!(op_norm(&Mat::zeros(4)), 0.0);
    }

    #[test]
    fn op_norm_matches_gram_route_for_2x2() {
        let m = mat2(1.0, 2.0, -0.5, 0.25);
        let gram = m.transpose().mul(&m).symmetrized();
        let (vals, _) = sym_eig(&gram).unwrap();
        assert!((op_norm(&m) - vals[0].sqrt()).abs() < 1e-12);
    }

    #[test]
    fn op_norm_dominates_vector_image() {
        let m = Mat::from_rows(&[
            vec![1.0, 0.3, -0.2],
            vec![0.0, 2.0, 0.7],
            vec![0.5, -1.0, 0.1],
        ])
        .unwrap();
        let nm = op_norm(&m);
        for v in [
            vec![1.0, 0.0, 0.0],
            vec![0.5, -0.5, 0.7],
            vec![-0.3, 0.9, 0.1],
        ] {
            assert!(norm2(&m.mul_vec(&v)) <= nm * norm2(&v) + 1e-12);
        }
    }
}
