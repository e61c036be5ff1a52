//! Dyadic lattices over a base cube.
//!
//! A lattice fixes a dimension d, a half-open base cube
//! `[a, a + 2^k0)^d`, a finest level `L`, and one shift bit vector per
//! level. All positions are integer multiples of the finest cell side
//! (the "unit"), so cube geometry is exact. A cube at level k has side
//! `2^(L-k)` units; its grid is offset by the shift contributions of all
//! finer levels, which means the finest cells coincide for every choice
//! of shift and sampled data can be shared across shifted lattices.
//!
//! Shifted grids remain nested, so interior cubes (those fully inside
//! the base cube) form a forest whose children are again interior.

pub mod haar;
pub mod sampled;

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const MAX_DIMENSION: usize = 3;
/// Hard ceiling on the number of mesh cells a lattice may address.
pub const DEFAULT_CELL_CAP: u64 = 1 << 24;

/// Splitmix-style hash of an address tuple into one rng seed, so random
/// fields depend only on (seed, address) and not on iteration order.
pub(crate) fn seed_mix(vals: &[u64]) -> u64 {
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &v in vals {
        h ^= v.wrapping_mul(0xbf58_476d_1ce4_e5b9).rotate_left(31);
        h = h.wrapping_mul(0x94d0_49bb_1331_11eb).wrapping_add(0x2545_f491_4f6c_dd1d);
    }
    h ^= h >> 29;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^ (h >> 32)
}

/// Cube address: level (0 = base scale) plus per-axis grid coordinates
/// within the level's (possibly shifted) grid. Only the first `d` axes
/// are meaningful.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DyadicCube {
    pub level: usize,
    pub coords: [i64; 3],
}

impl DyadicCube {
    pub fn new(level: usize, coords: [i64; 3]) -> Self {
        DyadicCube { level, coords }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyadicLattice {
    d: usize,
    level_max: usize,
    base_origin: Vec<f64>,
    base_exponent: i32,
    /// Shift bits per level 1..=L (index j-1); entry axis values in {0,1}.
    shift_bits: Vec<[u8; 3]>,
    /// Accumulated grid offset in units for each level 0..=L.
    shift_units: Vec<[i64; 3]>,
    /// Dense cube index offsets per level.
    level_offsets: Vec<usize>,
    cube_total: usize,
}

impl DyadicLattice {
    /// Standard (unshifted) lattice on `[0,1)^d`.
    pub fn standard(d: usize, level_max: usize) -> Result<Self> {
        Self::build(d, level_max, &vec![0.0; d], 0, &[], None)
    }

    pub fn with_base(
        d: usize,
        level_max: usize,
        base_origin: &[f64],
        base_exponent: i32,
    ) -> Result<Self> {
        Self::build(d, level_max, base_origin, base_exponent, &[], None)
    }

    pub fn build(
        d: usize,
        level_max: usize,
        base_origin: &[f64],
        base_exponent: i32,
        shift_bits: &[[u8; 3]],
        cell_cap: Option<u64>,
    ) -> Result<Self> {
        if d == 0 || d > MAX_DIMENSION {
            return Err(Error::validation(format!(
                "dimension must be 1..={MAX_DIMENSION}, got {d}"
            )));
        }
        if level_max == 0 {
            return Err(Error::validation("level_max must be at least 1"));
        }
        if level_max > 62 / d {
            return Err(Error::validation(format!(
                "level_max {level_max} overflows cube addressing in dimension {d}"
            )));
        }
        if base_origin.len() != d {
            return Err(Error::validation(format!(
                "base origin has {} coordinates, lattice dimension is {d}",
                base_origin.len()
            )));
        }
        let cap = cell_cap.unwrap_or(DEFAULT_CELL_CAP);
        let cells = 1u128 << (d * level_max);
        if cells > cap as u128 {
            return Err(Error::resource(format!(
                "2^(d*L) = 2^{} mesh cells exceeds the cell cap {cap}",
                d * level_max
            )));
        }
        if !shift_bits.is_empty() && shift_bits.len() != level_max {
            return Err(Error::validation(format!(
                "shift bits must cover levels 1..={level_max}, got {}",
                shift_bits.len()
            )));
        }
        let mut bits = vec![[0u8; 3]; level_max];
        for (j, b) in shift_bits.iter().enumerate() {
            for axis in 0..MAX_DIMENSION {
                if b[axis] > 1 || (axis >= d && b[axis] != 0) {
                    return Err(Error::validation(format!(
                        "shift bit out of range at level {}, axis {axis}",
                        j + 1
                    )));
                }
            }
            bits[j] = *b;
        }
        // shift_units[k] = sum over finer levels j > k of 2^(L-j) * bit_j.
        let mut shift_units = vec![[0i64; 3]; level_max + 1];
        for k in (0..level_max).rev() {
            let j = k + 1; // contribution of level j = k+1
            let step = 1i64 << (level_max - j);
            for axis in 0..d {
                shift_units[k][axis] =
                    shift_units[k + 1][axis] + step * bits[j - 1][axis] as i64;
            }
        }
        let mut lat = DyadicLattice {
            d,
            level_max,
            base_origin: base_origin.to_vec(),
            base_exponent,
            shift_bits: bits,
            shift_units,
            level_offsets: Vec::new(),
            cube_total: 0,
        };
        let mut offsets = Vec::with_capacity(level_max + 2);
        let mut total = 0usize;
        for k in 0..=level_max {
            offsets.push(total);
            let mut count = 1usize;
            for axis in 0..d {
                count *= lat.axis_cube_count(k, axis);
            }
            total += count;
        }
        offsets.push(total);
        lat.level_offsets = offsets;
        lat.cube_total = total;
        Ok(lat)
    }

    /// Same mesh, new shift bits.
    pub fn shifted(&self, shift_bits: &[[u8; 3]]) -> Result<Self> {
        Self::build(
            self.d,
            self.level_max,
            &self.base_origin,
            self.base_exponent,
            shift_bits,
            None,
        )
    }

    /// Same mesh, shift bits drawn uniformly from a seeded generator.
    pub fn random_shift(&self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bits = vec![[0u8; 3]; self.level_max];
        for b in bits.iter_mut() {
            for axis in 0..self.d {
                b[axis] = rng.random_range(0..2u8);
            }
        }
        self.shifted(&bits).expect("bits are in range by construction")
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn level_max(&self) -> usize {
        self.level_max
    }

    pub fn base_origin(&self) -> &[f64] {
        &self.base_origin
    }

    pub fn base_exponent(&self) -> i32 {
        self.base_exponent
    }

    pub fn base_side(&self) -> f64 {
        (2.0f64).powi(self.base_exponent)
    }

    /// Finest cell side length.
    pub fn unit(&self) -> f64 {
        (2.0f64).powi(self.base_exponent - self.level_max as i32)
    }

    pub fn cells_per_axis(&self) -> u64 {
        1u64 << self.level_max
    }

    pub fn cell_count(&self) -> usize {
        1usize << (self.d * self.level_max)
    }

    pub fn cell_volume(&self) -> f64 {
        self.unit().powi(self.d as i32)
    }

    pub fn side_length(&self, level: usize) -> f64 {
        (2.0f64).powi(self.base_exponent - level as i32)
    }

    pub fn cube_volume(&self, level: usize) -> f64 {
        self.side_length(level).powi(self.d as i32)
    }

    pub fn level_side_units(&self, level: usize) -> i64 {
        1i64 << (self.level_max - level)
    }

    pub fn shift_units(&self, level: usize) -> [i64; 3] {
        self.shift_units[level]
    }

    pub fn is_unshifted(&self) -> bool {
        self.shift_bits.iter().all(|b| b.iter().all(|&x| x == 0))
    }

    /// Do two lattices address the same mesh (shifts may differ)?
    pub fn same_mesh(&self, other: &Self) -> bool {
        self.d == other.d
            && self.level_max == other.level_max
            && self.base_exponent == other.base_exponent
            && self.base_origin == other.base_origin
    }

    /// Number of interior cubes along one axis at a level. A nonzero grid
    /// offset sacrifices the cube that straddles each base-cube face.
    pub fn axis_cube_count(&self, level: usize, axis: usize) -> usize {
        let full = 1usize << level;
        if self.shift_units[level][axis] == 0 {
            full
        } else {
            full - 1
        }
    }

    pub fn is_valid_cube(&self, cube: &DyadicCube) -> bool {
        if cube.level > self.level_max {
            return false;
        }
        (0..self.d).all(|axis| {
            cube.coords[axis] >= 0
                && (cube.coords[axis] as usize) < self.axis_cube_count(cube.level, axis)
        })
    }

    pub fn cube_count_total(&self) -> usize {
        self.cube_total
    }

    pub fn cube_count_at_level(&self, level: usize) -> usize {
        self.level_offsets[level + 1] - self.level_offsets[level]
    }

    /// Dense index of a cube within its own level.
    pub fn cube_level_index(&self, cube: &DyadicCube) -> Option<usize> {
        self.cube_index(cube)
            .map(|i| i - self.level_offsets[cube.level])
    }

    /// Dense index over all interior cubes, level-major.
    pub fn cube_index(&self, cube: &DyadicCube) -> Option<usize> {
        if !self.is_valid_cube(cube) {
            return None;
        }
        let mut idx = 0usize;
        for axis in 0..self.d {
            idx = idx * self.axis_cube_count(cube.level, axis) + cube.coords[axis] as usize;
        }
        Some(self.level_offsets[cube.level] + idx)
    }

    pub fn cubes_at_level(&self, level: usize) -> Vec<DyadicCube> {
        let mut out = Vec::with_capacity(self.cube_count_at_level(level));
        let counts: Vec<usize> = (0..self.d).map(|a| self.axis_cube_count(level, a)).collect();
        if counts.iter().any(|&c| c == 0) {
            return out;
        }
        let mut coords = [0i64; 3];
        loop {
            out.push(DyadicCube::new(level, coords));
            // Mixed-radix increment, last axis fastest.
            let mut axis = self.d;
            loop {
                if axis == 0 {
                    return out;
                }
                axis -= 1;
                coords[axis] += 1;
                if (coords[axis] as usize) < counts[axis] {
                    break;
                }
                coords[axis] = 0;
            }
        }
    }

    pub fn all_cubes(&self) -> Vec<DyadicCube> {
        (0..=self.level_max)
            .flat_map(|k| self.cubes_at_level(k))
            .collect()
    }

    /// Lower corner in units of the finest cell.
    pub fn cube_low_units(&self, cube: &DyadicCube) -> [i64; 3] {
        let side = self.level_side_units(cube.level);
        let mut low = [0i64; 3];
        for axis in 0..self.d {
            low[axis] = self.shift_units[cube.level][axis] + cube.coords[axis] * side;
        }
        low
    }

    pub fn cube_low(&self, cube: &DyadicCube) -> [f64; 3] {
        let lu = self.cube_low_units(cube);
        let u = self.unit();
        let mut out = [0.0; 3];
        for axis in 0..self.d {
            out[axis] = self.base_origin[axis] + lu[axis] as f64 * u;
        }
        out
    }

    pub fn cube_center(&self, cube: &DyadicCube) -> [f64; 3] {
        let mut c = self.cube_low(cube);
        let half = 0.5 * self.side_length(cube.level);
        for axis in 0..self.d {
            c[axis] += half;
        }
        c
    }

    pub fn children(&self, cube: &DyadicCube) -> Vec<DyadicCube> {
        if cube.level >= self.level_max {
            return Vec::new();
        }
        let child_level = cube.level + 1;
        let child_side = self.level_side_units(child_level);
        let low = self.cube_low_units(cube);
        let mut out = Vec::with_capacity(1 << self.d);
        for mask in 0..(1u32 << self.d) {
            let mut coords = [0i64; 3];
            for axis in 0..self.d {
                let off = ((mask >> axis) & 1) as i64;
                let pos = low[axis] + off * child_side;
                coords[axis] =
                    (pos - self.shift_units[child_level][axis]) / child_side;
            }
            let child = DyadicCube::new(child_level, coords);
            debug_assert!(self.is_valid_cube(&child));
            out.push(child);
        }
        out
    }

    /// Geometric parent, if it is an interior cube of this lattice.
    pub fn parent(&self, cube: &DyadicCube) -> Option<DyadicCube> {
        if cube.level == 0 {
            return None;
        }
        let parent_level = cube.level - 1;
        let side = self.level_side_units(parent_level);
        let low = self.cube_low_units(cube);
        let mut coords = [0i64; 3];
        for axis in 0..self.d {
            coords[axis] = (low[axis] - self.shift_units[parent_level][axis]).div_euclid(side);
        }
        let p = DyadicCube::new(parent_level, coords);
        self.is_valid_cube(&p).then_some(p)
    }

    /// The level-`level` interior cube containing a mesh cell, if any.
    pub fn cube_of_cell(&self, level: usize, cell: usize) -> Option<DyadicCube> {
        let axes = self.cell_axes(cell);
        let side = self.level_side_units(level);
        let mut coords = [0i64; 3];
        for axis in 0..self.d {
            coords[axis] =
                (axes[axis] as i64 - self.shift_units[level][axis]).div_euclid(side);
        }
        let c = DyadicCube::new(level, coords);
        self.is_valid_cube(&c).then_some(c)
    }

    pub fn cell_axes(&self, cell: usize) -> [u64; 3] {
        let c = self.cells_per_axis();
        let mut axes = [0u64; 3];
        let mut rem = cell as u64;
        for axis in (0..self.d).rev() {
            axes[axis] = rem % c;
            rem /= c;
        }
        axes
    }

    pub fn cell_index(&self, axes: &[u64; 3]) -> usize {
        let c = self.cells_per_axis();
        let mut idx = 0u64;
        for axis in 0..self.d {
            idx = idx * c + axes[axis];
        }
        idx as usize
    }

    pub fn cell_low(&self, cell: usize) -> [f64; 3] {
        let axes = self.cell_axes(cell);
        let u = self.unit();
        let mut out = [0.0; 3];
        for axis in 0..self.d {
            out[axis] = self.base_origin[axis] + axes[axis] as f64 * u;
        }
        out
    }

    pub fn cell_center(&self, cell: usize) -> [f64; 3] {
        let mut c = self.cell_low(cell);
        let half = 0.5 * self.unit();
        for axis in 0..self.d {
            c[axis] += half;
        }
        c
    }

    /// Mesh cell containing a point of the base cube.
    pub fn point_to_cell(&self, x: &[f64]) -> Option<usize> {
        let u = self.unit();
        let c = self.cells_per_axis();
        let mut axes = [0u64; 3];
        for axis in 0..self.d {
            let rel = (x[axis] - self.base_origin[axis]) / u;
            if rel < 0.0 {
                return None;
            }
            let i = rel.floor() as u64;
            if i >= c {
                return None;
            }
            axes[axis] = i;
        }
        Some(self.cell_index(&axes))
    }

    /// Visit the linear indices of every mesh cell inside a cube.
    pub fn for_each_cell(&self, cube: &DyadicCube, mut f: impl FnMut(usize)) {
        let side = self.level_side_units(cube.level) as u64;
        let low = self.cube_low_units(cube);
        debug_assert!(self.is_valid_cube(cube));
        match self.d {
            1 => {
                let start = low[0] as u64;
                let base = start;
                for i in 0..side {
                    f((base + i) as usize);
                }
            }
            2 => {
                let c = self.cells_per_axis();
                for i in 0..side {
                    let row = (low[0] as u64 + i) * c + low[1] as u64;
                    for j in 0..side {
                        f((row + j) as usize);
                    }
                }
            }
            3 => {
                let c = self.cells_per_axis();
                for i in 0..side {
                    for j in 0..side {
                        let row =
                            ((low[0] as u64 + i) * c + (low[1] as u64 + j)) * c + low[2] as u64;
                        for k in 0..side {
                            f((row + k) as usize);
                        }
                    }
                }
            }
            _ => unreachable!(),
        }
    }

    pub fn cube_cells(&self, cube: &DyadicCube) -> Vec<usize> {
        let mut v = Vec::with_capacity(
            (self.level_side_units(cube.level) as usize).pow(self.d as u32),
        );
        self.for_each_cell(cube, |c| v.push(c));
        v
    }

    /// Badness of a cube: some lattice cube J with `l(J) >= 2^r l(I)` has
    /// `dist(I, boundary of J) <= l(I)^gamma l(J)^(1-gamma)` where
    /// `gamma = alpha / (2 alpha + 2 d)`. Only scales present in the
    /// lattice are tested, so estimates derived from this predicate are
    /// lower bounds for their infinite-lattice counterparts.
    pub fn is_bad(&self, cube: &DyadicCube, r: u32, alpha: f64) -> bool {
        debug_assert!(self.is_valid_cube(cube));
        let k = cube.level;
        if (k as u32) < r {
            return false;
        }
        let gamma = alpha / (2.0 * alpha + 2.0 * self.d as f64);
        let low = self.cube_low_units(cube);
        let side_i = self.level_side_units(k);
        let len_i = self.side_length(k);
        let unit = self.unit();
        for j in 0..=(k - r as usize) {
            let side_j = self.level_side_units(j);
            let len_j = self.side_length(j);
            let threshold = len_i.powf(gamma) * len_j.powf(1.0 - gamma);
            let mut dist_units = i64::MAX;
            for axis in 0..self.d {
                let t = (low[axis] - self.shift_units[j][axis]).rem_euclid(side_j);
                let d_axis = t.min(side_j - t - side_i);
                dist_units = dist_units.min(d_axis);
            }
            if dist_units as f64 * unit <= threshold {
                return true;
            }
        }
        false
    }
}

/// Monte Carlo estimate of the probability that a cube is bad under a
/// uniformly random lattice shift.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PiBadEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub trials: u64,
    pub bad_count: u64,
    pub depth: usize,
}

/// Badness of the origin cube at the finest level of a depth-`depth`
/// lattice with the given shift bits, on the unit base cube. Pure
/// geometry; used by both the Monte Carlo estimator and the exhaustive
/// oracle.
fn shifted_origin_cube_is_bad(d: usize, depth: usize, bits: &[[u8; 3]], r: u32, alpha: f64) -> bool {
    let gamma = alpha / (2.0 * alpha + 2.0 * d as f64);
    // Accumulated offsets per level.
    let mut shift = vec![[0i64; 3]; depth + 1];
    for k in (0..depth).rev() {
        let step = 1i64 << (depth - k - 1);
        for axis in 0..d {
            shift[k][axis] = shift[k + 1][axis] + step * bits[k][axis] as i64;
        }
    }
    let low = shift[depth]; // zero: the finest grid is unshifted
    let unit = (2.0f64).powi(-(depth as i32));
    let len_i = unit;
    if (depth as u32) < r {
        return false;
    }
    for j in 0..=(depth - r as usize) {
        let side_j = 1i64 << (depth - j);
        let len_j = (2.0f64).powi(-(j as i32));
        let threshold = len_i.powf(gamma) * len_j.powf(1.0 - gamma);
        let mut dist_units = i64::MAX;
        for axis in 0..d {
            let t = (low[axis] - shift[j][axis]).rem_euclid(side_j);
            dist_units = dist_units.min(t.min(side_j - t - 1));
        }
        if dist_units as f64 * unit <= threshold {
            return true;
        }
    }
    false
}

pub const PI_BAD_MIN_DEPTH: usize = 16;

pub fn pi_bad_default_depth(r: u32) -> usize {
    (r as usize + 12).clamp(PI_BAD_MIN_DEPTH, 24)
}

pub fn estimate_pi_bad(d: usize, r: u32, alpha: f64, trials: u64, seed: u64) -> Result<PiBadEstimate> {
    estimate_pi_bad_at_depth(d, pi_bad_default_depth(r), r, alpha, trials, seed)
}

pub fn estimate_pi_bad_at_depth(
    d: usize,
    depth: usize,
    r: u32,
    alpha: f64,
    trials: u64,
    seed: u64,
) -> Result<PiBadEstimate> {
    if d == 0 || d > MAX_DIMENSION {
        return Err(Error::validation(format!("dimension must be 1..=3, got {d}")));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::validation("alpha must lie in (0, 1]"));
    }
    if r == 0 {
        return Err(Error::validation("scale gap r must be at least 1"));
    }
    if trials == 0 {
        return Err(Error::validation("trials must be positive"));
    }
    if depth == 0 || depth > 40 {
        return Err(Error::validation("depth must lie in 1..=40"));
    }
    let mut bad = 0u64;
    let mut bits = vec![[0u8; 3]; depth];
    for trial in 0..trials {
        // Per-trial generator keyed by (seed, trial) so trials are
        // reproducible independently of iteration order.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ trial.wrapping_mul(0x9e3779b97f4a7c15));
        for b in bits.iter_mut() {
            for axis in 0..d {
                b[axis] = rng.random_range(0..2u8);
            }
        }
        if shifted_origin_cube_is_bad(d, depth, &bits, r, alpha) {
            bad += 1;
        }
    }
    let p = bad as f64 / trials as f64;
    let stderr = (p * (1.0 - p) / trials as f64).sqrt();
    Ok(PiBadEstimate { estimate: p, stderr, trials, bad_count: bad, depth })
}

/// Exact bad probability by exhausting every shift pattern at the given
/// depth. Only the bits at scales coarser than the test cube matter and
/// each pattern is equally likely, so this is the exact finite-depth
/// value the Monte Carlo estimator converges to.
pub fn pi_bad_exact(d: usize, depth: usize, r: u32, alpha: f64) -> Result<f64> {
    let bit_count = d * depth;
    if bit_count > 22 {
        return Err(Error::resource(format!(
            "exhaustive enumeration over 2^{bit_count} shift patterns refused"
        )));
    }
    let mut bad = 0u64;
    let total = 1u64 << bit_count;
    let mut bits = vec![[0u8; 3]; depth];
    for pattern in 0..total {
        for (j, b) in bits.iter_mut().enumerate() {
            for axis in 0..d {
                b[axis] = ((pattern >> (j * d + axis)) & 1) as u8;
            }
        }
        if shifted_origin_cube_is_bad(d, depth, &bits, r, alpha) {
            bad += 1;
        }
    }
    Ok(bad as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_lattice_counts_and_geometry() {
        let lat = DyadicLattice::standard(1, 2).unwrap();
        assert_eq!(lat.cube_count_at_level(0), 1);
        assert_eq!(lat.cube_count_at_level(1), 2);
        assert_eq!(lat.cube_count_at_level(2), 4);
        assert_eq!(lat.cube_count_total(), 7);
        assert_eq!(lat.cell_count(), 4);
        let root = DyadicCube::new(0, [0; 3]);
        assert_eq!(lat.cube_low(&root)[0], 0.0);
        assert_eq!(lat.cube_center(&root)[0], 0.5);
        assert_eq!(lat.cube_volume(0), 1.0);
        let kids = lat.children(&root);
        assert_eq!(kids.len(), 2);
        assert_eq!(lat.cube_low(&kids[1])[0], 0.5);
        assert_eq!(lat.parent(&kids[1]), Some(root));
    }

    #[test]
    fn shifted_lattice_moves_coarse_levels_only() {
        // Shift bit at the finest level (level 2): level-1 and level-0
        // grids move by one finest cell, the mesh itself stays put.
        let base = DyadicLattice::standard(1, 2).unwrap();
        let lat = base.shifted(&[[0, 0, 0], [1, 0, 0]]).unwrap();
        assert_eq!(lat.shift_units(2)[0], 0);
        assert_eq!(lat.shift_units(1)[0], 1);
        assert_eq!(lat.shift_units(0)[0], 1);
        // Level 2: all 4 cells interior. Level 1: grid {1/4, 3/4} leaves
        // one interior cube [1/4, 3/4). Level 0 has none.
        assert_eq!(lat.cube_count_at_level(2), 4);
        assert_eq!(lat.cube_count_at_level(1), 1);
        assert_eq!(lat.cube_count_at_level(0), 0);
        let c = DyadicCube::new(1, [0; 3]);
        assert_eq!(lat.cube_low(&c)[0], 0.25);
        assert_eq!(lat.cube_cells(&c), vec![1, 2]);
        // A coarse-level bit moves only level 0.
        let lat2 = base.shifted(&[[1, 0, 0], [0, 0, 0]]).unwrap();
        assert_eq!(lat2.shift_units(1)[0], 0);
        assert_eq!(lat2.shift_units(0)[0], 2);
        assert_eq!(lat2.cube_count_at_level(1), 2);
    }

    #[test]
    fn enumerated_cubes_stay_inside_base() {
        let base = DyadicLattice::standard(2, 3).unwrap();
        let lat = base.random_shift(11);
        for cube in lat.all_cubes() {
            let low = lat.cube_low(&cube);
            let side = lat.side_length(cube.level);
            for axis in 0..2 {
                assert!(low[axis] >= -1e-12);
                assert!(low[axis] + side <= 1.0 + 1e-12);
            }
            let cells = lat.cube_cells(&cube);
            assert_eq!(
                cells.len(),
                (lat.level_side_units(cube.level) as usize).pow(2)
            );
        }
    }

    #[test]
    fn children_partition_parent_cells() {
        let lat = DyadicLattice::standard(2, 3).unwrap().random_shift(5);
        for cube in lat.cubes_at_level(1) {
            let mut union: Vec<usize> = lat
                .children(&cube)
                .iter()
                .flat_map(|c| lat.cube_cells(c))
                .collect();
            union.sort_unstable();
            let mut own = lat.cube_cells(&cube);
            own.sort_unstable();
            assert_eq!(union, own);
        }
    }

    #[test]
    fn cube_index_is_dense_and_invertible() {
        let lat = DyadicLattice::standard(2, 3).unwrap().random_shift(7);
        let mut seen = vec![false; lat.cube_count_total()];
        for cube in lat.all_cubes() {
            let idx = lat.cube_index(&cube).unwrap();
            assert!(!seen[idx]);
            seen[idx] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn cell_indexing_roundtrip() {
        let lat = DyadicLattice::standard(3, 2).unwrap();
        for cell in 0..lat.cell_count() {
            let axes = lat.cell_axes(cell);
            assert_eq!(lat.cell_index(&axes), cell);
            let center = lat.cell_center(cell);
            assert_eq!(lat.point_to_cell(&center), Some(cell));
        }
    }

    #[test]
    fn boundary_cube_is_bad() {
        // I = [0, 2^-10): it touches the boundary of every ancestor.
        let lat = DyadicLattice::standard(1, 12).unwrap();
        let cube = DyadicCube::new(10, [0; 3]);
        assert!(lat.is_bad(&cube, 2, 1.0));
    }

    #[test]
    fn centered_cube_good_at_large_gap_bad_at_small() {
        // Coords 32 at level 6: distance 31 units to the level-0 grid,
        // threshold 2^(-6/4) * 64 = 22.6 units, so good when only the
        // gap-6 scale qualifies.
        let lat = DyadicLattice::standard(1, 6).unwrap();
        let cube = DyadicCube::new(6, [32, 0, 0]);
        assert!(!lat.is_bad(&cube, 6, 1.0));
        // With r = 2 the gap-2 ancestor already decides: max possible
        // distance 1.5 * l(I) lies below the threshold 4^(3/4) * l(I).
        assert!(lat.is_bad(&cube, 2, 1.0));
    }

    #[test]
    fn badness_monotone_in_scale_gap() {
        let lat = DyadicLattice::standard(1, 8).unwrap();
        for coords in [3i64, 57, 100, 200] {
            let cube = DyadicCube::new(8, [coords, 0, 0]);
            let mut prev = lat.is_bad(&cube, 8, 1.0);
            for r in (1..8).rev() {
                let now = lat.is_bad(&cube, r, 1.0);
                // Shrinking r only adds qualifying scales.
                assert!(now || !prev);
                prev = now;
            }
        }
    }

    #[test]
    fn pi_bad_monte_carlo_matches_exhaustive_oracle() {
        let d = 1;
        let depth = 10;
        let r = 6;
        let exact = pi_bad_exact(d, depth, r, 1.0).unwrap();
        assert!(exact > 0.0 && exact < 1.0);
        let est = estimate_pi_bad_at_depth(d, depth, r, 1.0, 4000, 42).unwrap();
        assert!(
            (est.estimate - exact).abs() <= 3.5 * est.stderr.max(1e-4),
            "estimate {} vs exact {exact}",
            est.estimate
        );
    }

    #[test]
    fn pi_bad_reproducible_and_seed_stable() {
        let a = estimate_pi_bad(1, 6, 1.0, 2000, 7).unwrap();
        let b = estimate_pi_bad(1, 6, 1.0, 2000, 7).unwrap();
        assert_eq!(a.estimate, b.estimate);
        let c = estimate_pi_bad(1, 6, 1.0, 2000, 8).unwrap();
        let spread = (a.estimate - c.estimate).abs();
        assert!(spread <= 3.0 * (a.stderr + c.stderr).max(1e-4));
    }

    #[test]
    fn pi_bad_saturates_at_small_scale_gap() {
        // At r = 2 every position is within threshold of its gap-2
        // ancestor boundary: the probability is exactly one.
        let est = estimate_pi_bad(1, 2, 1.0, 500, 3).unwrap();
        assert_eq!(est.estimate, 1.0);
    }

    #[test]
    fn pi_bad_zero_when_gap_exceeds_depth() {
        let est = estimate_pi_bad_at_depth(1, 8, 20, 1.0, 100, 1).unwrap();
        assert_eq!(est.estimate, 0.0);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(DyadicLattice::standard(0, 2).is_err());
        assert!(DyadicLattice::standard(4, 2).is_err());
        assert!(DyadicLattice::standard(1, 0).is_err());
        assert!(DyadicLattice::build(1, 30, &[0.0], 0, &[], Some(1 << 20)).is_err());
        assert!(estimate_pi_bad(1, 0, 1.0, 10, 0).is_err());
        assert!(estimate_pi_bad(1, 2, 0.0, 10, 0).is_err());
    }
}
