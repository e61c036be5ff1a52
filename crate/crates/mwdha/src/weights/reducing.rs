//! Reducing operators: positive definite matrices V_I, V_I' whose
//! norms reproduce the averaged weighted lengths
//! rho_I(e) = (|I|^-1 int_I |W^(1/p) e|^p)^(1/p) and their duals.
//!
//! At p = 2 the averages themselves give exact reducing operators. For
//! general p the unit ball of rho_I is a symmetric convex body; the
//! minimum-volume enclosing ellipsoid of sampled boundary points,
//! rescaled so the smallest sampled ratio |V e|/rho(e) is one, gives a
//! computable canonical choice with distortion at most sqrt(n) up to
//! fit tolerance. Every pair records the measured distortion.

use super::MatrixWeight;
use crate::dyadic::{DyadicCube, DyadicLattice};
use crate::error::{Error, Result};
use crate::linalg::{mvee, norm2, op_norm, Mat, SpdMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::str::FromStr;
use std::sync::Arc;

pub const DEFAULT_MVEE_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReducingMethod {
    /// V = (m_I W)^(1/2), V' = (m_I W^-1)^(1/2); requires p = 2.
    ExactP2,
    /// Ellipsoid fit to the rho_I unit ball; any p, any n.
    Mvee,
    /// Closed-form scalar averages; requires n = 1.
    Scalar,
    /// Scalar if n = 1, exact averages if p = 2, ellipsoid fit else.
    Auto,
}

impl ReducingMethod {
    pub fn resolve(self, n: usize, p: f64) -> ReducingMethod {
        match self {
            ReducingMethod::Auto => {
                if n == 1 {
                    ReducingMethod::Scalar
                } else if p == 2.0 {
                    ReducingMethod::ExactP2
                } else {
                    ReducingMethod::Mvee
                }
            }
            other => other,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ReducingMethod::ExactP2 => "exact_p2",
            ReducingMethod::Mvee => "mvee",
            ReducingMethod::Scalar => "scalar",
            ReducingMethod::Auto => "auto",
        }
    }
}

impl FromStr for ReducingMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact_p2" => Ok(ReducingMethod::ExactP2),
            "mvee" => Ok(ReducingMethod::Mvee),
            "scalar" => Ok(ReducingMethod::Scalar),
            "auto" => Ok(ReducingMethod::Auto),
            other => Err(Error::validation(format!(
                "unknown reducing method '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReducingPair {
    pub cube: DyadicCube,
    pub v: SpdMatrix,
    pub v_dual: SpdMatrix,
    pub method: ReducingMethod,
    /// Measured max/min of |V e|/rho(e) over the sampled directions
    /// (1 for the exact methods).
    pub distortion: f64,
}

/// Deterministic unit directions used for the ellipsoid fit and for
/// two-sidedness checks.
pub fn sample_directions(n: usize) -> Vec<Vec<f64>> {
    match n {
        1 => vec![vec![1.0]],
        2 => (0..64)
            .map(|k| {
                let theta = std::f64::consts::PI * k as f64 / 64.0;
                vec![theta.cos(), theta.sin()]
            })
            .collect(),
        3 => {
            // Fibonacci sphere, 512 points.
            let golden = (1.0 + 5.0_f64.sqrt()) / 2.0;
            (0..512)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / 512.0;
                    let r = (1.0 - z * z).sqrt();
                    let phi = 2.0 * std::f64::consts::PI * k as f64 / golden;
                    vec![r * phi.cos(), r * phi.sin(), z]
                })
                .collect()
        }
        _ => {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
            let count = 1usize << (5 * n - 4);
            (0..count)
                .map(|_| {
                    loop {
                        let v: Vec<f64> = (0..n)
                            .map(|_| rng.random::<f64>() * 2.0 - 1.0)
                            .collect();
                        let len = norm2(&v);
                        if len > 1e-3 {
                            return v.iter().map(|x| x / len).collect();
                        }
                    }
                })
                .collect()
        }
    }
}

/// rho_I(e)^exponent for every direction, from a matrix field whose
/// cells are M(x) with |M(x) e| the pointwise weighted length.
fn rho_values(
    field: &[Mat],
    lattice: &DyadicLattice,
    cube: &DyadicCube,
    exponent: f64,
    dirs: &[Vec<f64>],
) -> Vec<f64> {
    let mut sums = vec![0.0f64; dirs.len()];
    let mut count = 0usize;
    lattice.for_each_cell(cube, |cell| {
        let m = &field[cell];
        for (s, e) in sums.iter_mut().zip(dirs) {
            *s += norm2(&m.mul_vec(e)).powf(exponent);
        }
        count += 1;
    });
    let inv = 1.0 / count as f64;
    sums.iter()
        .map(|s| (s * inv).powf(1.0 / exponent))
        .collect()
}

/// Ellipsoid-fit reducing operator for one cube from a pointwise field:
/// returns (V, measured distortion).
fn mvee_reducing(
    field: &[Mat],
    lattice: &DyadicLattice,
    cube: &DyadicCube,
    exponent: f64,
    tol: f64,
) -> Result<(SpdMatrix, f64)> {
    let n = field[0].n();
    let dirs = sample_directions(n);
    let rho = rho_values(field, lattice, cube, exponent, &dirs);
    let mut points = Vec::with_capacity(2 * dirs.len());
    for (e, r) in dirs.iter().zip(&rho) {
        if !(r.is_finite() && *r > 0.0) {
            return Err(Error::singular(
                "weighted length vanished or overflowed during reducing fit",
            ));
        }
        let q: Vec<f64> = e.iter().map(|x| x / r).collect();
        let neg: Vec<f64> = q.iter().map(|x| -x).collect();
        points.push(q);
        points.push(neg);
    }
    let fit = mvee(&points, tol)?;
    let e_shape = fit.shape;
    let ratios: Vec<f64> = dirs
        .iter()
        .zip(&rho)
        .map(|(e, r)| norm2(&e_shape.mat().mul_vec(e)) / r)
        .collect();
    let min_r = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_r = ratios.iter().cloned().fold(0.0_f64, f64::max);
    if !(min_r.is_finite() && min_r > 0.0) {
        return Err(Error::singular("degenerate ellipsoid fit"));
    }
    let v = SpdMatrix::new(e_shape.mat().scale(1.0 / min_r))?;
    Ok((v, max_r / min_r))
}

fn scalar_pair(
    w: &MatrixWeight,
    lattice: &DyadicLattice,
    cube: &DyadicCube,
    p: f64,
) -> Result<(SpdMatrix, SpdMatrix)> {
    let pp = p / (p - 1.0);
    let dual_field = w.power_field(-1.0 / (p - 1.0))?;
    let mut mw = 0.0;
    let mut mdual = 0.0;
    let mut count = 0usize;
    lattice.for_each_cell(cube, |cell| {
        mw += w.scalar_cell(cell);
        mdual += dual_field[cell].get(0, 0);
        count += 1;
    });
    let c = count as f64;
    let v = SpdMatrix::new(Mat::diag(&[(mw / c).powf(1.0 / p)]))?;
    let v_dual = SpdMatrix::new(Mat::diag(&[(mdual / c).powf(1.0 / pp)]))?;
    Ok((v, v_dual))
}

/// Enforce ||V V'|| >= 1 by inflating V' when the product norm dips
/// below one; the equivalence class of the pair is unchanged.
fn normalize_pair(v: &SpdMatrix, v_dual: SpdMatrix) -> Result<SpdMatrix> {
    let prod = op_norm(&v.mat().mul(v_dual.mat()));
    if prod < 1.0 {
        SpdMatrix::new(v_dual.mat().scale(1.0 / prod))
    } else {
        Ok(v_dual)
    }
}

pub fn reducing_operator(
    w: &MatrixWeight,
    lattice: &DyadicLattice,
    cube: &DyadicCube,
    p: f64,
    method: ReducingMethod,
) -> Result<ReducingPair> {
    reducing_operator_with_tol(w, lattice, cube, p, method, DEFAULT_MVEE_TOL)
}

pub fn reducing_operator_with_tol(
    w: &MatrixWeight,
    lattice: &DyadicLattice,
    cube: &DyadicCube,
    p: f64,
    method: ReducingMethod,
    tol: f64,
) -> Result<ReducingPair> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::validation("p must lie in (1, infinity)"));
    }
    if !w.lattice().same_mesh(lattice) {
        return Err(Error::validation(
            "mismatched lattice handles between weight and cube",
        ));
    }
    if !lattice.is_valid_cube(cube) {
        return Err(Error::validation("cube is not interior to the lattice"));
    }
    let method = method.resolve(w.n(), p);
    let pp = p / (p - 1.0);
    let (v, v_dual, distortion) = match method {
        ReducingMethod::Scalar => {
            if w.n() != 1 {
                return Err(Error::validation("scalar method requires n = 1"));
            }
            let (v, vd) = scalar_pair(w, lattice, cube, p)?;
            (v, vd, 1.0)
        }
        ReducingMethod::ExactP2 => {
            if p != 2.0 {
                return Err(Error::validation("exact_p2 method requires p = 2"));
            }
            let v = w.cell_average(lattice, cube)?.power(0.5)?;
            let inv_field = w.power_field(-1.0)?;
            let mut acc = Mat::zeros(w.n());
            let mut count = 0usize;
            lattice.for_each_cell(cube, |cell| {
                acc.axpy(&inv_field[cell], 1.0);
                count += 1;
            });
            acc.scale_in_place(1.0 / count as f64);
            let v_dual = SpdMatrix::new(acc)?.power(0.5)?;
            (v, v_dual, 1.0)
        }
        ReducingMethod::Mvee => {
            let primal_field = w.power_field(1.0 / p)?;
            let dual_field = w.power_field(-1.0 / p)?;
            let (v, dist_p) = mvee_reducing(&primal_field, lattice, cube, p, tol)?;
            let (vd, dist_d) = mvee_reducing(&dual_field, lattice, cube, pp, tol)?;
            (v, vd, dist_p.max(dist_d))
        }
        ReducingMethod::Auto => unreachable!("resolved above"),
    };
    let v_dual = normalize_pair(&v, v_dual)?;
    Ok(ReducingPair { cube: *cube, v, v_dual, method, distortion })
}

/// Reducing pairs for every interior cube of a lattice, computed once
/// and shared; the dense cube index is the key.
#[derive(Debug, Clone)]
pub struct ReducingField {
    lattice: Arc<DyadicLattice>,
    p: f64,
    method: ReducingMethod,
    pairs: Vec<ReducingPair>,
}

impl ReducingField {
    pub fn compute(
        w: &MatrixWeight,
        lattice: &Arc<DyadicLattice>,
        p: f64,
        method: ReducingMethod,
    ) -> Result<Self> {
        Self::compute_with_tol(w, lattice, p, method, DEFAULT_MVEE_TOL)
    }

    pub fn compute_with_tol(
        w: &MatrixWeight,
        lattice: &Arc<DyadicLattice>,
        p: f64,
        method: ReducingMethod,
        tol: f64,
    ) -> Result<Self> {
        let method = method.resolve(w.n(), p);
        // Materialize the needed power fields before the parallel loop
        // so the memo is written once.
        match method {
            ReducingMethod::Scalar => {
                w.power_field(-1.0 / (p - 1.0))?;
            }
            ReducingMethod::ExactP2 => {
                w.power_field(-1.0)?;
            }
            ReducingMethod::Mvee => {
                w.power_field(1.0 / p)?;
                w.power_field(-1.0 / p)?;
            }
            ReducingMethod::Auto => unreachable!("resolved above"),
        }
        let cubes = lattice.all_cubes();
        let pairs: Result<Vec<ReducingPair>> = cubes
            .par_iter()
            .map(|cube| reducing_operator_with_tol(w, lattice, cube, p, method, tol))
            .collect();
        Ok(ReducingField { lattice: lattice.clone(), p, method, pairs: pairs? })
    }

    pub fn lattice(&self) -> &Arc<DyadicLattice> {
        &self.lattice
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn method(&self) -> ReducingMethod {
        self.method
    }

    pub fn n(&self) -> usize {
        self.pairs[0].v.n()
    }

    pub fn get(&self, cube: &DyadicCube) -> Result<&ReducingPair> {
        let idx = self
            .lattice
            .cube_index(cube)
            .ok_or_else(|| Error::validation("cube is not interior to the lattice"))?;
        Ok(&self.pairs[idx])
    }

    pub fn pairs(&self) -> &[ReducingPair] {
        &self.pairs
    }

    pub fn max_distortion(&self) -> f64 {
        self.pairs
            .iter()
            .map(|p| p.distortion)
            .fold(1.0_f64, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::WeightDescriptor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lat(l: usize) -> Arc<DyadicLattice> {
        Arc::new(DyadicLattice::standard(1, l).unwrap())
    }

    fn root() -> DyadicCube {
        DyadicCube::new(0, [0; 3])
    }

    #[test]
    fn identity_weight_gives_identity_pair_all_methods() {
        let lattice = lat(3);
        let w = MatrixWeight::identity(lattice.clone(), 2);
        for (method, p) in [
            (ReducingMethod::ExactP2, 2.0),
            (ReducingMethod::Mvee, 2.0),
            (ReducingMethod::Mvee, 3.0),
        ] {
            let pair = reducing_operator(&w, &lattice, &root(), p, method).unwrap();
            let dv = pair.v.mat().sub(&Mat::identity(2)).max_abs();
            let dd = pair.v_dual.mat().sub(&Mat::identity(2)).max_abs();
            assert!(dv < 1e-4, "{method:?} p={p}: V off identity by {dv}");
            assert!(dd < 1e-4, "{method:?} p={p}: V' off identity by {dd}");
        }
    }

    #[test]
    fn exact_p2_on_constant_diagonal() {
        let lattice = lat(2);
        let w = MatrixWeight::constant(lattice.clone(), Mat::diag(&[1.0, 4.0])).unwrap();
        let pair =
            reducing_operator(&w, &lattice, &root(), 2.0, ReducingMethod::ExactP2).unwrap();
        assert!((pair.v.mat().get(0, 0) - 1.0).abs() < 1e-12);
        assert!((pair.v.mat().get(1, 1) - 2.0).abs() < 1e-12);
        assert!((pair.v_dual.mat().get(0, 0) - 1.0).abs() < 1e-12);
        assert!((pair.v_dual.mat().get(1, 1) - 0.5).abs() < 1e-12);
        // Commuting case: the product has norm exactly 1.
        assert!((op_norm(&pair.v.mat().mul(pair.v_dual.mat())) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mvee_recovers_constant_diagonal_at_p3() {
        let lattice = lat(2);
        let w = MatrixWeight::constant(lattice.clone(), Mat::diag(&[1.0, 4.0])).unwrap();
        let pair = reducing_operator(&w, &lattice, &root(), 3.0, ReducingMethod::Mvee).unwrap();
        // rho(e) = |diag(1, 4^(1/3)) e| exactly, so the fit should be
        // that diagonal matrix and the distortion close to one.
        let c = 4.0_f64.powf(1.0 / 3.0);
        assert!((pair.v.mat().get(0, 0) - 1.0).abs() < 2e-3);
        assert!((pair.v.mat().get(1, 1) - c).abs() < 2e-3);
        assert!(pair.v.mat().get(0, 1).abs() < 2e-3);
        assert!(pair.distortion < 1.01);
    }

    #[test]
    fn mvee_two_sided_bounds_hold_on_rough_weight() {
        let lattice = lat(4);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cells: Vec<Mat> = (0..lattice.cell_count())
            .map(|_| {
                let a = 0.2 + 3.0 * rng.random::<f64>();
                let b = 0.2 + 3.0 * rng.random::<f64>();
                let t = rng.random::<f64>() * std::f64::consts::PI;
                let q = super::super::rotation(2, t);
                q.mul(&Mat::diag(&[a, b])).mul(&q.transpose()).symmetrized()
            })
            .collect();
        let w = MatrixWeight::from_cells(lattice.clone(), cells, WeightDescriptor::None).unwrap();
        for p in [1.5, 2.0, 4.0] {
            let pair = reducing_operator(&w, &lattice, &root(), p, ReducingMethod::Mvee).unwrap();
            let field = w.power_field(1.0 / p).unwrap();
            let dirs = sample_directions(2);
            let rho = rho_values(&field, &lattice, &root(), p, &dirs);
            for (e, r) in dirs.iter().zip(&rho) {
                let ve = norm2(&pair.v.mat().mul_vec(e));
                assert!(ve >= r * (1.0 - 1e-9), "lower bound broke at p={p}");
                assert!(
                    ve <= 2.0_f64.sqrt() * r * (1.0 + 1e-3),
                    "upper bound broke at p={p}: ratio {}",
                    ve / r
                );
            }
            assert!(pair.distortion <= 2.0_f64.sqrt() * (1.0 + 1e-3));
        }
    }

    #[test]
    fn scalar_method_matches_closed_form() {
        let lattice = lat(1);
        let cells = vec![Mat::diag(&[1.0]), Mat::diag(&[4.0])];
        let w = MatrixWeight::from_cells(lattice.clone(), cells, WeightDescriptor::None).unwrap();
        let p = 2.0;
        let pair = reducing_operator(&w, &lattice, &root(), p, ReducingMethod::Auto).unwrap();
        assert_eq!(pair.method, ReducingMethod::Scalar);
        assert!((pair.v.mat().get(0, 0) - 2.5_f64.sqrt()).abs() < 1e-12);
        // m(w^-1) = (1 + 1/4)/2 = 0.625.
        assert!((pair.v_dual.mat().get(0, 0) - 0.625_f64.sqrt()).abs() < 1e-12);
        // General p oracle.
        let p = 2.5;
        let pp = p / (p - 1.0);
        let pair = reducing_operator(&w, &lattice, &root(), p, ReducingMethod::Scalar).unwrap();
        let want_v = 2.5_f64.powf(1.0 / p);
        let want_dual = ((1.0 + 0.25_f64.powf(pp / p)) / 2.0).powf(1.0 / pp);
        assert!((pair.v.mat().get(0, 0) - want_v).abs() < 1e-12);
        assert!((pair.v_dual.mat().get(0, 0) - want_dual).abs() < 1e-12);
    }

    #[test]
    fn mvee_agrees_with_scalar_for_n1() {
        let lattice = lat(3);
        let w = MatrixWeight::power1d(lattice.clone(), &[0.5]).unwrap();
        for p in [1.5, 3.0] {
            let a = reducing_operator(&w, &lattice, &root(), p, ReducingMethod::Scalar).unwrap();
            let b = reducing_operator(&w, &lattice, &root(), p, ReducingMethod::Mvee).unwrap();
            let rel = (a.v.mat().get(0, 0) - b.v.mat().get(0, 0)).abs() / a.v.mat().get(0, 0);
            assert!(rel < 1e-5, "p={p} scalar={} mvee={}", a.v.mat().get(0, 0), b.v.mat().get(0, 0));
        }
    }

    #[test]
    fn normalization_holds_across_random_weights() {
        let lattice = lat(3);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..5 {
            let cells: Vec<Mat> = (0..lattice.cell_count())
                .map(|_| {
                    let a = 0.1 + rng.random::<f64>() * 9.0;
                    let b = 0.1 + rng.random::<f64>() * 9.0;
                    let t = rng.random::<f64>();
                    let q = super::super::rotation(2, t);
                    q.mul(&Mat::diag(&[a, b])).mul(&q.transpose()).symmetrized()
                })
                .collect();
            let w =
                MatrixWeight::from_cells(lattice.clone(), cells, WeightDescriptor::None).unwrap();
            for (method, p) in [
                (ReducingMethod::ExactP2, 2.0),
                (ReducingMethod::Mvee, 2.0),
                (ReducingMethod::Mvee, 1.7),
            ] {
                let field = ReducingField::compute(&w, &lattice, p, method).unwrap();
                for pair in field.pairs() {
                    let prod = op_norm(&pair.v.mat().mul(pair.v_dual.mat()));
                    assert!(
                        prod >= 1.0 - 1e-9,
                        "trial {trial} {method:?} p={p}: ||V V'|| = {prod}"
                    );
                }
            }
        }
    }

    #[test]
    fn exact_p2_and_mvee_are_equivalent_at_p2() {
        let lattice = lat(3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cells: Vec<Mat> = (0..lattice.cell_count())
            .map(|_| {
                let a = 0.5 + rng.random::<f64>() * 4.0;
                let b = 0.5 + rng.random::<f64>() * 4.0;
                let t = rng.random::<f64>() * 2.0;
                let q = super::super::rotation(2, t);
                q.mul(&Mat::diag(&[a, b])).mul(&q.transpose()).symmetrized()
            })
            .collect();
        let w = MatrixWeight::from_cells(lattice.clone(), cells, WeightDescriptor::None).unwrap();
        let exact = reducing_operator(&w, &lattice, &root(), 2.0, ReducingMethod::ExactP2).unwrap();
        let fit = reducing_operator(&w, &lattice, &root(), 2.0, ReducingMethod::Mvee).unwrap();
        let a = op_norm(&fit.v.mat().mul(&exact.v.inverse().into_mat()));
        let b = op_norm(&exact.v.mat().mul(&fit.v.inverse().into_mat()));
        assert!(a * b <= 2.0 * (1.0 + 1e-3) * (1.0 + 1e-3), "cross distortion {}", a * b);
    }

    #[test]
    fn method_preconditions_enforced() {
        let lattice = lat(2);
        let w2 = MatrixWeight::identity(lattice.clone(), 2);
        assert!(
            reducing_operator(&w2, &lattice, &root(), 3.0, ReducingMethod::ExactP2).is_err()
        );
        assert!(reducing_operator(&w2, &lattice, &root(), 2.0, ReducingMethod::Scalar).is_err());
        let other = Arc::new(DyadicLattice::standard(1, 5).unwrap());
        assert!(reducing_operator(&w2, &other, &root(), 2.0, ReducingMethod::Auto).is_err());
    }

    #[test]
    fn field_covers_all_levels_and_memoizes_geometry() {
        let lattice = lat(3);
        let w = MatrixWeight::power1d(lattice.clone(), &[0.5]).unwrap();
        let field = ReducingField::compute(&w, &lattice, 2.0, ReducingMethod::Auto).unwrap();
        assert_eq!(field.pairs().len(), lattice.cube_count_total());
        let cube = DyadicCube::new(3, [5, 0, 0]);
        let direct = reducing_operator(&w, &lattice, &cube, 2.0, ReducingMethod::Auto).unwrap();
        let stored = field.get(&cube).unwrap();
        assert!((direct.v.mat().get(0, 0) - stored.v.mat().get(0, 0)).abs() < 1e-15);
    }
}
