//! Carleson sequences of vectors indexed by (cube, signature) and the
//! embedding check that pairs them with a matrix symbol: the left-hand
//! integral is evaluated exactly on the mesh and reported next to the
//! norms that bound it.

use crate::dyadic::haar::{sig_count, HaarCoefficients, HaarSignature};
use crate::dyadic::sampled::SampledFunction;
use crate::dyadic::{DyadicCube, DyadicLattice};
use crate::error::{Error, Result};
use crate::linalg::{norm2, op_norm, Mat};
use crate::weights::{ap_characteristic, MatrixWeight, ReducingField, ReducingMethod};
use crate::weights::DEFAULT_PAIR_CAP;
use serde::Serialize;
use std::sync::Arc;

/// Exact supremum over cubes J of S(J)/|J| where S(J) is the total
/// mass carried by the subtree of J. `mass[level][cube_level_index]`
/// must cover every level of the lattice. One bottom-up pass.
pub(crate) fn tree_sup(lattice: &DyadicLattice, mass: &[Vec<f64>]) -> (f64, Option<DyadicCube>) {
    let lmax = lattice.level_max();
    let mut best = f64::NEG_INFINITY;
    let mut best_cube = None;
    let mut below: Vec<f64> = Vec::new();
    for k in (0..=lmax).rev() {
        let cubes = lattice.cubes_at_level(k);
        let inv_vol = 1.0 / lattice.cube_volume(k);
        let mut totals = Vec::with_capacity(cubes.len());
        for (ci, cube) in cubes.iter().enumerate() {
            let mut s = mass[k][ci];
            if k < lmax {
                for child in lattice.children(cube) {
                    let idx = lattice
                        .cube_level_index(&child)
                        .expect("children of interior cubes are interior");
                    s += below[idx];
                }
            }
            if s * inv_vol > best {
                best = s * inv_vol;
                best_cube = Some(*cube);
            }
            totals.push(s);
        }
        below = totals;
    }
    if best_cube.is_none() {
        best = 0.0;
    }
    (best.max(0.0), best_cube)
}

/// A sequence of vectors indexed by (cube, Haar signature). Missing
/// entries are zero; entries live on cubes above the finest level, the
/// same index set Haar detail coefficients use.
#[derive(Debug, Clone)]
pub struct CarlesonSequence {
    lattice: Arc<DyadicLattice>,
    n: usize,
    /// values[level][cube_level_index * sig_count + mask]; an empty
    /// vector marks a zero entry.
    values: Vec<Vec<Vec<f64>>>,
}

/// Result of the bottom-up supremum, with the cube attaining it.
#[derive(Debug, Clone, Serialize)]
pub struct CarlesonNorm {
    pub norm: f64,
    pub norm_sq: f64,
    pub attaining: Option<DyadicCube>,
}

impl CarlesonSequence {
    pub fn zeros(lattice: Arc<DyadicLattice>, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::validation("vector dimension must be positive"));
        }
        let sc = sig_count(lattice.d());
        let values = (0..lattice.level_max())
            .map(|k| vec![Vec::new(); lattice.cube_count_at_level(k) * sc])
            .collect();
        Ok(CarlesonSequence { lattice, n, values })
    }

    /// Entries taken from vector-valued Haar detail coefficients.
    pub fn from_haar_coefficients(coeffs: &HaarCoefficients<Vec<f64>>) -> Result<Self> {
        let mut seq = Self::zeros(coeffs.lattice().clone(), coeffs.mean().len().max(1))?;
        let mut status = Ok(());
        coeffs.for_each(|cube, sig, v| {
            if status.is_ok() {
                status = seq.set(cube, sig, v.clone());
            }
        });
        status?;
        Ok(seq)
    }

    /// Entries taken from scalar Haar coefficients as 1-vectors.
    pub fn from_scalar_haar(coeffs: &HaarCoefficients<f64>) -> Result<Self> {
        let mut seq = Self::zeros(coeffs.lattice().clone(), 1)?;
        let mut status = Ok(());
        coeffs.for_each(|cube, sig, v| {
            if status.is_ok() {
                status = seq.set(cube, sig, vec![*v]);
            }
        });
        status?;
        Ok(seq)
    }

    pub fn lattice(&self) -> &Arc<DyadicLattice> {
        &self.lattice
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn slot(&self, cube: &DyadicCube, sig: HaarSignature) -> Option<usize> {
        if cube.level >= self.lattice.level_max() || sig.d() != self.lattice.d() {
            return None;
        }
        let idx = self.lattice.cube_level_index(cube)?;
        Some(idx * sig_count(self.lattice.d()) + sig.mask() as usize)
    }

    pub fn set(&mut self, cube: &DyadicCube, sig: HaarSignature, v: Vec<f64>) -> Result<()> {
        if v.len() != self.n {
            return Err(Error::validation(format!(
                "entry has dimension {}, sequence holds vectors of dimension {}",
                v.len(),
                self.n
            )));
        }
        let s = self
            .slot(cube, sig)
            .ok_or_else(|| Error::validation("sequence address outside lattice"))?;
        self.values[cube.level][s] = v;
        Ok(())
    }

    /// The stored entry, or None when it is zero or out of range.
    pub fn get(&self, cube: &DyadicCube, sig: HaarSignature) -> Option<&[f64]> {
        let s = self.slot(cube, sig)?;
        let v = &self.values[cube.level][s];
        (!v.is_empty()).then_some(v.as_slice())
    }

    /// Multiplies every entry, rescaling the norm by |factor|.
    pub fn scale(&mut self, factor: f64) {
        for row in &mut self.values {
            for v in row {
                for x in v.iter_mut() {
                    *x *= factor;
                }
            }
        }
    }

    /// Squared-norm mass per cube, summed over signatures, padded with
    /// a zero row for the finest level.
    fn mass(&self) -> Vec<Vec<f64>> {
        let sc = sig_count(self.lattice.d());
        let lmax = self.lattice.level_max();
        let mut mass: Vec<Vec<f64>> = self
            .values
            .iter()
            .map(|row| {
                row.chunks(sc)
                    .map(|chunk| chunk.iter().map(|v| norm2(v).powi(2)).sum())
                    .collect()
            })
            .collect();
        mass.push(vec![0.0; self.lattice.cube_count_at_level(lmax)]);
        mass
    }

    /// sup_J |J|^-1 sum over subtree entries of |entry|^2, exactly, by
    /// one bottom-up tree pass.
    pub fn carleson_norm_detailed(&self) -> CarlesonNorm {
        let (sup, cube) = tree_sup(&self.lattice, &self.mass());
        CarlesonNorm { norm: sup.sqrt(), norm_sq: sup, attaining: cube }
    }

    pub fn carleson_norm(&self) -> f64 {
        self.carleson_norm_detailed().norm
    }
}

/// Inputs and outcome of the embedding test: `lhs` is the integral of
/// the square-function expression built from the sequence, the symbol,
/// and the weight; the remaining fields are the quantities expected to
/// bound it.
#[derive(Debug, Clone, Serialize)]
pub struct EmbeddingReport {
    pub lhs: f64,
    pub sequence_norm: f64,
    pub symbol_lp_norm: f64,
    pub ap_characteristic: f64,
    /// lhs / (sequence_norm^p * symbol_lp_norm^p); zero when the
    /// numerator vanishes, infinite when only the denominator does.
    pub ratio: f64,
}

/// Evaluates the integral of
/// (sum over (I, sig) of |m_I(B W^(-1/p)) V_I lambda_I|^2 / |I| * 1_I)^(p/2)
/// against the norms that are expected to control it.
pub fn carleson_embedding_check(
    lambda: &CarlesonSequence,
    b: &SampledFunction<Mat>,
    w: &MatrixWeight,
    p: f64,
) -> Result<EmbeddingReport> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::validation("p must lie in (1, infinity)"));
    }
    let lattice = lambda.lattice();
    if !b.lattice().same_mesh(lattice) || !w.lattice().same_mesh(lattice) {
        return Err(Error::validation(
            "mismatched lattice handles among sequence, symbol, and weight",
        ));
    }
    if b.get(0).n() != w.n() || lambda.n() != w.n() {
        return Err(Error::validation(
            "symbol, sequence, and weight dimensions must agree",
        ));
    }
    let field = ReducingField::compute(w, lattice, p, ReducingMethod::Auto)?;
    let dual_power = w.power_field(-1.0 / p)?;
    let g_field: Vec<Mat> = b
        .data()
        .iter()
        .zip(dual_power.iter())
        .map(|(bm, wm)| bm.mul(wm))
        .collect();
    let g_means = crate::weights::field_cube_averages(&g_field, lattice);

    let d = lattice.d();
    let lmax = lattice.level_max();
    let sigs = HaarSignature::all(d);

    // Per-cube mass divided by cube volume, then prefix sums down the
    // tree give the integrand value on each finest-level cube.
    let mut running: Vec<Vec<f64>> = vec![Vec::new(); lmax + 1];
    for k in 0..=lmax {
        let cubes = lattice.cubes_at_level(k);
        let inv_vol = 1.0 / lattice.cube_volume(k);
        let mut row = Vec::with_capacity(cubes.len());
        for cube in &cubes {
            let mut g = 0.0;
            if k < lmax {
                let idx = lattice.cube_index(cube).expect("enumerated cube is valid");
                let pair = &field.pairs()[idx];
                for sig in &sigs {
                    if let Some(lam) = lambda.get(cube, *sig) {
                        let v = g_means[idx].mul_vec(&pair.v.apply(lam));
                        g += norm2(&v).powi(2);
                    }
                }
            }
            let above = lattice
                .parent(cube)
                .and_then(|par| lattice.cube_level_index(&par))
                .map_or(0.0, |pi| running[k - 1][pi]);
            row.push(above + g * inv_vol);
        }
        running[k] = row;
    }

    let vol = lattice.cell_volume();
    let lhs: f64 = running[lmax]
        .iter()
        .map(|v| v.powf(p / 2.0) * vol)
        .sum();

    let symbol_lp = b
        .data()
        .iter()
        .map(|m| op_norm(m).powf(p) * vol)
        .sum::<f64>()
        .powf(1.0 / p);
    let seq_norm = lambda.carleson_norm();
    let chi = ap_characteristic(w, p, lattice, DEFAULT_PAIR_CAP)?;
    let denom = seq_norm.powf(p) * symbol_lp.powf(p);
    let ratio = if lhs == 0.0 {
        0.0
    } else if denom == 0.0 {
        f64::INFINITY
    } else {
        lhs / denom
    };
    Ok(EmbeddingReport {
        lhs,
        sequence_norm: seq_norm,
        symbol_lp_norm: symbol_lp,
        ap_characteristic: chi.value,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::haar::haar_transform;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_lattice(d: usize, l: usize) -> Arc<DyadicLattice> {
        Arc::new(DyadicLattice::standard(d, l).unwrap())
    }

    #[test]
    fn single_cube_mass_sets_the_norm() {
        let lat = unit_lattice(1, 4);
        let mut seq = CarlesonSequence::zeros(lat.clone(), 1).unwrap();
        let cube = DyadicCube::new(2, [1, 0, 0]);
        let sig = HaarSignature::from_mask(0, 1).unwrap();
        seq.set(&cube, sig, vec![1.0]).unwrap();
        let got = seq.carleson_norm_detailed();
        // |J0| = 1/4, so the supremum is 4 and is attained at J0.
        assert_eq!(got.norm_sq, 4.0);
        assert_eq!(got.norm, 2.0);
        assert_eq!(got.attaining, Some(cube));
    }

    #[test]
    fn uniform_sqrt_volume_sequence_counts_levels() {
        // With |lambda_I|^2 = |I| on every cube of levels 0..=m the sum
        // over the subtree of the root contributes 1 per level, so the
        // squared norm is m + 1 and the root attains it.
        let m = 6usize;
        let lat = unit_lattice(1, m + 1);
        let mut seq = CarlesonSequence::zeros(lat.clone(), 1).unwrap();
        let sig = HaarSignature::from_mask(0, 1).unwrap();
        for k in 0..=m {
            for cube in lat.cubes_at_level(k) {
                seq.set(&cube, sig, vec![lat.cube_volume(k).sqrt()]).unwrap();
            }
        }
        let got = seq.carleson_norm_detailed();
        assert!((got.norm_sq - (m + 1) as f64).abs() < 1e-12);
        assert_eq!(got.attaining, Some(DyadicCube::new(0, [0, 0, 0])));
    }

    #[test]
    fn empty_sequence_has_zero_norm() {
        let lat = unit_lattice(2, 3);
        let seq = CarlesonSequence::zeros(lat, 2).unwrap();
        assert_eq!(seq.carleson_norm(), 0.0);
    }

    #[test]
    fn tree_pass_matches_brute_force_double_loop() {
        let base = unit_lattice(2, 3);
        let lat = Arc::new(base.random_shift(11));
        let mut seq = CarlesonSequence::zeros(lat.clone(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in 0..lat.level_max() {
            for cube in lat.cubes_at_level(k) {
                for sig in HaarSignature::all(2) {
                    if rng.random::<f64>() < 0.4 {
                        let v = vec![rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5];
                        seq.set(&cube, sig, v).unwrap();
                    }
                }
            }
        }
        let fast = seq.carleson_norm_detailed().norm_sq;

        let contains = |j: &DyadicCube, i: &DyadicCube| -> bool {
            if i.level < j.level {
                return false;
            }
            let jl = lat.cube_low_units(j);
            let il = lat.cube_low_units(i);
            let js = lat.level_side_units(j.level);
            let is = lat.level_side_units(i.level);
            (0..2).all(|a| il[a] >= jl[a] && il[a] + is <= jl[a] + js)
        };
        let mut brute = 0.0f64;
        for j in lat.all_cubes() {
            let mut s = 0.0;
            for k in 0..lat.level_max() {
                for i in lat.cubes_at_level(k) {
                    if contains(&j, &i) {
                        for sig in HaarSignature::all(2) {
                            if let Some(v) = seq.get(&i, sig) {
                                s += norm2(v).powi(2);
                            }
                        }
                    }
                }
            }
            brute = brute.max(s / lat.cube_volume(j.level));
        }
        assert!((fast - brute).abs() < 1e-12 * brute.max(1.0));
    }

    #[test]
    fn embedding_reduces_to_detail_energy_unweighted() {
        // n = 1, W = 1, B = 1, p = 2: the left-hand side collapses to
        // the sum of squared detail coefficients.
        let lat = unit_lattice(1, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = SampledFunction::from_fn(lat.clone(), |_| rng.random::<f64>() * 2.0 - 1.0);
        let coeffs = haar_transform(&f, &lat).unwrap();
        let seq = CarlesonSequence::from_scalar_haar(&coeffs).unwrap();
        let b = SampledFunction::constant(lat.clone(), Mat::identity(1));
        let w = MatrixWeight::identity(lat.clone(), 1);
        let report = carleson_embedding_check(&seq, &b, &w, 2.0).unwrap();
        assert!((report.lhs - coeffs.sq_detail_norm()).abs() < 1e-12);
        assert!((report.symbol_lp_norm - 1.0).abs() < 1e-12);
        assert!(report.ratio.is_finite());
    }

    #[test]
    fn embedding_zero_sequence_gives_zero() {
        let lat = unit_lattice(1, 4);
        let seq = CarlesonSequence::zeros(lat.clone(), 1).unwrap();
        let b = SampledFunction::constant(lat.clone(), Mat::identity(1));
        let w = MatrixWeight::identity(lat.clone(), 1);
        let report = carleson_embedding_check(&seq, &b, &w, 2.5).unwrap();
        assert_eq!(report.lhs, 0.0);
        assert_eq!(report.ratio, 0.0);
    }

    #[test]
    fn embedding_with_power_weight_stays_bounded() {
        let lat = unit_lattice(1, 6);
        let w = MatrixWeight::power1d(lat.clone(), &[0.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let f = SampledFunction::from_fn(lat.clone(), |_| rng.random::<f64>() * 2.0 - 1.0);
        let coeffs = haar_transform(&f, &lat).unwrap();
        let seq = CarlesonSequence::from_scalar_haar(&coeffs).unwrap();
        let b = SampledFunction::from_fn(lat.clone(), |x| {
            Mat::diag(&[(1.0 + x[0]).sin()])
        });
        let report = carleson_embedding_check(&seq, &b, &w, 2.0).unwrap();
        assert!(report.lhs > 0.0 && report.lhs.is_finite());
        assert!(report.ap_characteristic > 1.0);
        assert!(report.ratio.is_finite());
    }

    #[test]
    fn entry_validation_rejects_bad_addresses() {
        let lat = unit_lattice(1, 3);
        let mut seq = CarlesonSequence::zeros(lat.clone(), 2).unwrap();
        let sig = HaarSignature::from_mask(0, 1).unwrap();
        // Finest-level cubes carry no signature slot.
        let at_finest = DyadicCube::new(3, [0, 0, 0]);
        assert!(seq.set(&at_finest, sig, vec![1.0, 0.0]).is_err());
        // Dimension mismatch.
        let cube = DyadicCube::new(1, [0, 0, 0]);
        assert!(seq.set(&cube, sig, vec![1.0]).is_err());
        assert!(seq.set(&cube, sig, vec![1.0, 2.0]).is_ok());
        assert_eq!(seq.get(&cube, sig), Some(&[1.0, 2.0][..]));
    }
}
