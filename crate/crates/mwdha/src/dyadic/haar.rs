//! Tensor-product Haar functions and exact forward/inverse transforms.
//!
//! A signature picks, per axis, the normalized indicator (bit 1) or the
//! oscillating factor (bit 0); the all-ones signature is the constant
//! and is excluded. Transforms run on unshifted lattices, where detail
//! plus base-cube mean is an orthonormal expansion of every function
//! that is piecewise constant on the mesh.

use super::sampled::{CellValue, SampledFunction};
use super::{DyadicCube, DyadicLattice};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Cancellative signature: per-axis bits with at least one zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HaarSignature {
    mask: u8,
    d: u8,
}

impl HaarSignature {
    pub fn new(bits: &[u8]) -> Result<Self> {
        let d = bits.len();
        if d == 0 || d > super::MAX_DIMENSION {
            return Err(Error::validation("signature dimension must be 1..=3"));
        }
        let mut mask = 0u8;
        for (axis, &b) in bits.iter().enumerate() {
            if b > 1 {
                return Err(Error::validation("signature bits must be 0 or 1"));
            }
            mask |= b << axis;
        }
        Self::from_mask(mask, d)
    }

    pub fn from_mask(mask: u8, d: usize) -> Result<Self> {
        if d == 0 || d > super::MAX_DIMENSION {
            return Err(Error::validation("signature dimension must be 1..=3"));
        }
        if mask == (1 << d) - 1 {
            return Err(Error::validation(
                "the all-ones signature is the constant factor and is excluded",
            ));
        }
        if mask >= (1 << d) {
            return Err(Error::validation("signature mask out of range"));
        }
        Ok(HaarSignature { mask, d: d as u8 })
    }

    /// All cancellative signatures in mask order.
    pub fn all(d: usize) -> Vec<HaarSignature> {
        (0..sig_count(d) as u8)
            .map(|mask| HaarSignature { mask, d: d as u8 })
            .collect()
    }

    pub fn d(&self) -> usize {
        self.d as usize
    }

    pub fn mask(&self) -> u8 {
        self.mask
    }

    pub fn bit(&self, axis: usize) -> u8 {
        (self.mask >> axis) & 1
    }

    pub fn bits(&self) -> Vec<u8> {
        (0..self.d as usize).map(|a| self.bit(a)).collect()
    }

    /// Sign of the Haar function on the child selected by a per-axis
    /// offset mask: oscillating axes flip sign on the upper half.
    pub fn sign_on_child(&self, child_mask: u32) -> f64 {
        let mut s = 1.0;
        for axis in 0..self.d as usize {
            if self.bit(axis) == 0 && (child_mask >> axis) & 1 == 1 {
                s = -s;
            }
        }
        s
    }
}

/// Number of cancellative signatures in dimension d. The masks
/// 0..2^d-1 enumerate them, the excluded all-ones mask being last.
pub fn sig_count(d: usize) -> usize {
    (1 << d) - 1
}

/// Pointwise value of h_I^eps. Zero outside the cube, and
/// +/- |I|^(-1/2) inside according to the per-axis halves.
pub fn haar_eval(
    lattice: &DyadicLattice,
    cube: &DyadicCube,
    sig: HaarSignature,
    x: &[f64],
) -> Result<f64> {
    if sig.d() != lattice.d() {
        return Err(Error::validation("signature dimension differs from lattice"));
    }
    if x.len() != lattice.d() {
        return Err(Error::validation("point dimension differs from lattice"));
    }
    let low = lattice.cube_low(cube);
    let side = lattice.side_length(cube.level);
    let mut child_mask = 0u32;
    for axis in 0..lattice.d() {
        let rel = x[axis] - low[axis];
        if !(0.0..side).contains(&rel) {
            return Ok(0.0);
        }
        if rel >= 0.5 * side {
            child_mask |= 1 << axis;
        }
    }
    let scale = lattice.cube_volume(cube.level).sqrt().recip();
    Ok(scale * sig.sign_on_child(child_mask))
}

/// Detail coefficients for every cube above the finest level, plus the
/// base-cube mean.
#[derive(Debug, Clone)]
pub struct HaarCoefficients<T: CellValue> {
    lattice: Arc<DyadicLattice>,
    /// details[level][cube_level_index * sig_count + mask]
    details: Vec<Vec<T>>,
    mean: T,
}

/// Serialization record for one detail coefficient.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HaarRecord<T> {
    pub level: usize,
    pub coords: Vec<i64>,
    pub signature: Vec<u8>,
    pub value: T,
}

impl<T: CellValue> HaarCoefficients<T> {
    pub fn zeros(lattice: Arc<DyadicLattice>, template: &T) -> Result<Self> {
        if !lattice.is_unshifted() {
            return Err(Error::unsupported(
                "Haar coefficients are defined on the unshifted lattice only",
            ));
        }
        let sc = sig_count(lattice.d());
        let zero = template.zeros_like();
        let details = (0..lattice.level_max())
            .map(|k| vec![zero.clone(); lattice.cube_count_at_level(k) * sc])
            .collect();
        Ok(HaarCoefficients { lattice, details, mean: zero })
    }

    pub fn lattice(&self) -> &Arc<DyadicLattice> {
        &self.lattice
    }

    pub fn mean(&self) -> &T {
        &self.mean
    }

    pub fn set_mean(&mut self, m: T) {
        self.mean = m;
    }

    fn slot(&self, cube: &DyadicCube, sig: HaarSignature) -> Option<usize> {
        if cube.level >= self.lattice.level_max() || sig.d() != self.lattice.d() {
            return None;
        }
        let idx = self.lattice.cube_level_index(cube)?;
        Some(idx * sig_count(self.lattice.d()) + sig.mask() as usize)
    }

    pub fn get(&self, cube: &DyadicCube, sig: HaarSignature) -> Option<&T> {
        self.slot(cube, sig).map(|s| &self.details[cube.level][s])
    }

    pub fn set(&mut self, cube: &DyadicCube, sig: HaarSignature, value: T) -> Result<()> {
        let s = self
            .slot(cube, sig)
            .ok_or_else(|| Error::validation("coefficient address outside lattice"))?;
        self.details[cube.level][s] = value;
        Ok(())
    }

    /// Visit every detail coefficient, level-major.
    pub fn for_each(&self, mut f: impl FnMut(&DyadicCube, HaarSignature, &T)) {
        let sc = sig_count(self.lattice.d());
        for k in 0..self.lattice.level_max() {
            for (ci, cube) in self.lattice.cubes_at_level(k).iter().enumerate() {
                for (m, sig) in HaarSignature::all(self.lattice.d()).into_iter().enumerate() {
                    f(cube, sig, &self.details[k][ci * sc + m]);
                }
            }
        }
    }

    pub fn map<U: CellValue>(&self, f: impl Fn(&T) -> U) -> HaarCoefficients<U> {
        HaarCoefficients {
            lattice: self.lattice.clone(),
            details: self
                .details
                .iter()
                .map(|row| row.iter().map(&f).collect())
                .collect(),
            mean: f(&self.mean),
        }
    }

    /// Sum of squared norms of all detail coefficients.
    pub fn sq_detail_norm(&self) -> f64 {
        self.details
            .iter()
            .flat_map(|row| row.iter())
            .map(|v| v.sq_norm())
            .sum()
    }

    pub fn records(&self) -> Vec<HaarRecord<T>>
    where
        T: Serialize,
    {
        let d = self.lattice.d();
        let mut out = Vec::new();
        self.for_each(|cube, sig, value| {
            out.push(HaarRecord {
                level: cube.level,
                coords: cube.coords[..d].to_vec(),
                signature: sig.bits(),
                value: value.clone(),
            });
        });
        out
    }
}

/// Forward transform: detail coefficients from child means.
pub fn haar_transform<T: CellValue>(
    f: &SampledFunction<T>,
    lattice: &DyadicLattice,
) -> Result<HaarCoefficients<T>> {
    if f.lattice().as_ref() != lattice {
        return Err(Error::validation(
            "mismatched lattice handles between function and transform",
        ));
    }
    if !lattice.is_unshifted() {
        return Err(Error::unsupported(
            "Haar transforms are defined on the unshifted lattice only",
        ));
    }
    let means = f.level_means(lattice)?;
    let mut coeffs = HaarCoefficients::zeros(f.lattice().clone(), &f.data()[0])?;
    let d = lattice.d();
    let sc = sig_count(d);
    let sigs = HaarSignature::all(d);
    let child_factor = 1.0 / (1 << d) as f64;
    for k in 0..lattice.level_max() {
        let root_vol = lattice.cube_volume(k).sqrt();
        for (ci, cube) in lattice.cubes_at_level(k).iter().enumerate() {
            let children = lattice.children(cube);
            for (m, sig) in sigs.iter().enumerate() {
                let mut acc = f.data()[0].zeros_like();
                for (child_mask, child) in children.iter().enumerate() {
                    let cli = lattice.cube_level_index(child).expect("child interior");
                    acc.add_scaled(&means[k + 1][cli], sig.sign_on_child(child_mask as u32));
                }
                acc.scale(root_vol * child_factor);
                coeffs.details[k][ci * sc + m] = acc;
            }
        }
    }
    coeffs.mean = means[0][0].clone();
    Ok(coeffs)
}

/// Inverse transform: synthesize cell values top-down. Exact inverse of
/// the forward transform.
pub fn haar_inverse<T: CellValue>(coeffs: &HaarCoefficients<T>) -> Result<SampledFunction<T>> {
    let lattice = coeffs.lattice.clone();
    let d = lattice.d();
    let sc = sig_count(d);
    let mut current = vec![coeffs.mean.clone()];
    for k in 0..lattice.level_max() {
        let scale = lattice.cube_volume(k).sqrt().recip();
        let mut next = vec![coeffs.mean.zeros_like(); lattice.cube_count_at_level(k + 1)];
        for (ci, cube) in lattice.cubes_at_level(k).iter().enumerate() {
            for (child_mask, child) in lattice.children(cube).iter().enumerate() {
                let cli = lattice.cube_level_index(child).expect("child interior");
                let mut v = current[ci].clone();
                for (m, sig) in HaarSignature::all(d).into_iter().enumerate() {
                    let s = scale * sig.sign_on_child(child_mask as u32);
                    v.add_scaled(&coeffs.details[k][ci * sc + m], s);
                }
                next[cli] = v;
            }
        }
        current = next;
    }
    SampledFunction::new(lattice, current)
}
