//! Matrix weights on a mesh: piecewise-constant fields of positive
//! definite matrices, exact cube averages, weighted norms, the weighted
//! maximal function, and generators for test families.
//!
//! Power-law weights store the analytic cell average of |x|^beta rather
//! than a midpoint sample, so the singularity at the origin is
//! integrated exactly and refinement studies see the true blowup rate.

pub mod characteristic;
pub mod reducing;

use crate::dyadic::sampled::SampledFunction;
use crate::dyadic::{DyadicCube, DyadicLattice};
use crate::error::{Error, Result};
use crate::linalg::{norm2, Mat, SpdMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, RwLock};

pub use characteristic::{
    ap_characteristic, ap_characteristic_reducing, b2p_characteristic, square_function_norm,
    ApCharacteristic, B2pCharacteristic, DEFAULT_PAIR_CAP,
};
pub use reducing::{reducing_operator, ReducingField, ReducingMethod, ReducingPair};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum WeightDescriptor {
    None,
    /// diag(|x|^beta_i) in one dimension, exact cell averages.
    Power1d(Vec<f64>),
    Custom(String),
}

impl WeightDescriptor {
    pub fn label(&self) -> String {
        match self {
            WeightDescriptor::None => "none".into(),
            WeightDescriptor::Power1d(betas) => {
                let parts: Vec<String> = betas.iter().map(|b| b.to_string()).collect();
                format!("power1d:{}", parts.join(","))
            }
            WeightDescriptor::Custom(tag) => tag.clone(),
        }
    }
}

/// A positive definite matrix field, constant on each mesh cell.
#[derive(Debug, Clone)]
pub struct MatrixWeight {
    lattice: Arc<DyadicLattice>,
    n: usize,
    cells: Vec<SpdMatrix>,
    descriptor: WeightDescriptor,
    /// Memoized pointwise powers W^t keyed by t's bit pattern.
    power_cache: Arc<RwLock<HashMap<u64, Arc<Vec<Mat>>>>>,
}

impl MatrixWeight {
    pub fn from_cells(
        lattice: Arc<DyadicLattice>,
        cells: Vec<Mat>,
        descriptor: WeightDescriptor,
    ) -> Result<Self> {
        if cells.len() != lattice.cell_count() {
            return Err(Error::validation(format!(
                "weight has {} cell values, lattice has {} cells",
                cells.len(),
                lattice.cell_count()
            )));
        }
        let n = cells[0].n();
        let mut spd = Vec::with_capacity(cells.len());
        for (i, m) in cells.into_iter().enumerate() {
            if m.n() != n {
                return Err(Error::validation(format!(
                    "cell {i} has size {}, expected {n}",
                    m.n()
                )));
            }
            let v = SpdMatrix::new(m).map_err(|e| {
                Error::validation(format!("weight value at cell {i} is not SPD: {e}"))
            })?;
            spd.push(v);
        }
        Ok(MatrixWeight {
            lattice,
            n,
            cells: spd,
            descriptor,
            power_cache: Arc::new(RwLock::new(HashMap::new())),
        })
    }

    pub fn constant(lattice: Arc<DyadicLattice>, value: Mat) -> Result<Self> {
        let cells = vec![value; lattice.cell_count()];
        Self::from_cells(lattice, cells, WeightDescriptor::None)
    }

    pub fn identity(lattice: Arc<DyadicLattice>, n: usize) -> Self {
        Self::constant(lattice, Mat::identity(n)).expect("identity is SPD")
    }

    /// diag(|x|^beta_i) with exact per-cell averages; requires d = 1 and
    /// every beta_i > -1 so the averages are finite.
    pub fn power1d(lattice: Arc<DyadicLattice>, betas: &[f64]) -> Result<Self> {
        if lattice.d() != 1 {
            return Err(Error::validation("power1d weights require dimension 1"));
        }
        if betas.is_empty() {
            return Err(Error::validation("power1d needs at least one exponent"));
        }
        for &b in betas {
            if b <= -1.0 {
                return Err(Error::validation(format!(
                    "exponent {b} is not integrable: need beta > -1"
                )));
            }
        }
        let u = lattice.unit();
        let cells = (0..lattice.cell_count())
            .map(|cell| {
                let a = lattice.cell_low(cell)[0];
                let b = a + u;
                let avgs: Vec<f64> = betas
                    .iter()
                    .map(|&beta| power_cell_average(a, b, beta))
                    .collect();
                Mat::diag(&avgs)
            })
            .collect();
        Self::from_cells(lattice, cells, WeightDescriptor::Power1d(betas.to_vec()))
    }

    /// Parse descriptor strings: "identity:n", "diag:a,b,...",
    /// "power1d:b1,b2,...".
    pub fn from_descriptor(lattice: Arc<DyadicLattice>, descriptor: &str) -> Result<Self> {
        let (kind, args) = descriptor
            .split_once(':')
            .map(|(k, a)| (k, Some(a)))
            .unwrap_or((descriptor, None));
        match kind {
            "identity" => {
                let n: usize = args
                    .unwrap_or("1")
                    .parse()
                    .map_err(|_| Error::validation("identity:n needs an integer size"))?;
                if n == 0 || n > 8 {
                    return Err(Error::validation("identity size must be 1..=8"));
                }
                Ok(Self::identity(lattice, n))
            }
            "diag" => {
                let vals = parse_f64_list(args.unwrap_or(""))?;
                if vals.is_empty() || vals.iter().any(|&v| v <= 0.0) {
                    return Err(Error::validation("diag entries must be positive"));
                }
                Self::constant(lattice, Mat::diag(&vals))
                    .map(|w| w.with_descriptor(WeightDescriptor::Custom(descriptor.into())))
            }
            "power1d" => {
                let betas = parse_f64_list(args.unwrap_or(""))?;
                Self::power1d(lattice, &betas)
            }
            other => Err(Error::validation(format!(
                "unknown weight descriptor kind '{other}'"
            ))),
        }
    }

    fn with_descriptor(mut self, d: WeightDescriptor) -> Self {
        self.descriptor = d;
        self
    }

    pub fn lattice(&self) -> &Arc<DyadicLattice> {
        &self.lattice
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn descriptor(&self) -> &WeightDescriptor {
        &self.descriptor
    }

    pub fn cell(&self, cell: usize) -> &SpdMatrix {
        &self.cells[cell]
    }

    pub fn cells(&self) -> &[SpdMatrix] {
        &self.cells
    }

    /// Scalar density for n = 1 weights.
    pub fn scalar_cell(&self, cell: usize) -> f64 {
        debug_assert_eq!(self.n, 1);
        self.cells[cell].mat().get(0, 0)
    }

    /// Pointwise power field W^t, memoized.
    pub fn power_field(&self, t: f64) -> Result<Arc<Vec<Mat>>> {
        let key = t.to_bits();
        if let Some(hit) = self.power_cache.read().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let field: Result<Vec<Mat>> = self
            .cells
            .par_iter()
            .map(|w| w.power(t).map(SpdMatrix::into_mat))
            .collect();
        let field = Arc::new(field?);
        self.power_cache
            .write()
            .expect("cache lock")
            .insert(key, field.clone());
        Ok(field)
    }

    /// Arithmetic mean of W over a cube of a mesh-compatible lattice.
    pub fn cell_average(&self, lattice: &DyadicLattice, cube: &DyadicCube) -> Result<SpdMatrix> {
        if !self.lattice.same_mesh(lattice) {
            return Err(Error::validation(
                "mismatched lattice handles between weight and cube",
            ));
        }
        let mut acc = Mat::zeros(self.n);
        let mut count = 0usize;
        lattice.for_each_cell(cube, |cell| {
            acc.axpy(self.cells[cell].mat(), 1.0);
            count += 1;
        });
        acc.scale_in_place(1.0 / count as f64);
        SpdMatrix::new(acc)
    }
}

/// Exact average of |x|^beta over [a, b), valid for beta > -1 including
/// cells that straddle or touch the origin.
pub fn power_cell_average(a: f64, b: f64, beta: f64) -> f64 {
    let anti = |x: f64| x.signum() * x.abs().powf(beta + 1.0) / (beta + 1.0);
    (anti(b) - anti(a)) / (b - a)
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::validation(format!("cannot parse '{t}' as a number")))
        })
        .collect()
}

/// Averages of an arbitrary matrix field over every interior cube,
/// indexed by the lattice's dense cube index. Bottom-up accumulation.
pub fn field_cube_averages(field: &[Mat], lattice: &DyadicLattice) -> Vec<Mat> {
    let lmax = lattice.level_max();
    let n = field[0].n();
    let mut out = vec![Mat::zeros(n); lattice.cube_count_total()];
    let mut per_level: Vec<Vec<Mat>> = vec![Vec::new(); lmax + 1];
    per_level[lmax] = field.to_vec();
    let inv = 1.0 / (1 << lattice.d()) as f64;
    for k in (0..lmax).rev() {
        let cubes = lattice.cubes_at_level(k);
        let mut row = Vec::with_capacity(cubes.len());
        for cube in &cubes {
            let mut acc = Mat::zeros(n);
            for child in lattice.children(cube) {
                let ci = lattice.cube_level_index(&child).expect("child interior");
                acc.axpy(&per_level[k + 1][ci], 1.0);
            }
            acc.scale_in_place(inv);
            row.push(acc);
        }
        per_level[k] = row;
    }
    for k in 0..=lmax {
        for (ci, cube) in lattice.cubes_at_level(k).iter().enumerate() {
            let idx = lattice.cube_index(cube).expect("enumerated cube is valid");
            out[idx] = per_level[k][ci].clone();
        }
    }
    out
}

/// Weighted L^p norm: (integral of |W^(1/p) f|^p)^(1/p).
pub fn lp_norm(f: &SampledFunction<Vec<f64>>, w: &MatrixWeight, p: f64) -> Result<f64> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::validation("p must lie in (1, infinity)"));
    }
    if !f.lattice().same_mesh(w.lattice()) {
        return Err(Error::validation(
            "mismatched lattice handles between function and weight",
        ));
    }
    let root = w.power_field(1.0 / p)?;
    let vol = f.lattice().cell_volume();
    let total: f64 = f
        .data()
        .par_iter()
        .enumerate()
        .map(|(cell, v)| norm2(&root[cell].mul_vec(v)).powf(p) * vol)
        .sum();
    Ok(total.powf(1.0 / p))
}

/// Unweighted L^p norm of a scalar sampled function.
pub fn scalar_lp_norm(f: &SampledFunction<f64>, p: f64) -> f64 {
    let vol = f.lattice().cell_volume();
    f.data()
        .iter()
        .map(|v| v.abs().powf(p) * vol)
        .sum::<f64>()
        .powf(1.0 / p)
}

/// Weighted maximal function of a matrix symbol: at each cell the max
/// over containing cubes I of m_I || V_I W^(-1/p) B^T ||.
pub fn weighted_maximal(
    w: &MatrixWeight,
    b: &SampledFunction<Mat>,
    p: f64,
    lattice: &Arc<DyadicLattice>,
    method: ReducingMethod,
) -> Result<SampledFunction<f64>> {
    if !b.lattice().same_mesh(w.lattice()) || !b.lattice().same_mesh(lattice) {
        return Err(Error::validation(
            "mismatched lattice handles between symbol, weight, and cube lattice",
        ));
    }
    let field = ReducingField::compute(w, lattice, p, method)?;
    let wm = w.power_field(-1.0 / p)?;
    // G(x) = W^(-1/p)(x) B(x)^T, constant per cell.
    let g: Vec<Mat> = b
        .data()
        .par_iter()
        .enumerate()
        .map(|(cell, bm)| wm[cell].mul(&bm.transpose()))
        .collect();
    let mut out = vec![f64::NEG_INFINITY; lattice.cell_count()];
    for k in 0..=lattice.level_max() {
        for cube in lattice.cubes_at_level(k) {
            let v = &field.get(&cube)?.v;
            let mut mean = 0.0;
            let mut count = 0usize;
            lattice.for_each_cell(&cube, |cell| {
                mean += crate::linalg::op_norm(&v.mat().mul(&g[cell]));
                count += 1;
            });
            mean /= count as f64;
            lattice.for_each_cell(&cube, |cell| {
                if mean > out[cell] {
                    out[cell] = mean;
                }
            });
        }
    }
    // Cells outside every interior cube of a shifted lattice keep no
    // value; report zero there rather than -inf.
    for v in out.iter_mut() {
        if !v.is_finite() {
            *v = 0.0;
        }
    }
    SampledFunction::new(b.lattice().clone(), out)
}

/// JSON exchange format for weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightFile {
    pub d: usize,
    pub n: usize,
    pub l: usize,
    #[serde(default)]
    pub base_origin: Option<Vec<f64>>,
    #[serde(default)]
    pub base_exponent: Option<i32>,
    #[serde(default)]
    pub descriptor: Option<String>,
    /// Row-major matrices per cell; omitted when descriptor is given.
    #[serde(default)]
    pub cells: Option<Vec<Vec<Vec<f64>>>>,
}

impl WeightFile {
    pub fn load(&self) -> Result<(Arc<DyadicLattice>, MatrixWeight)> {
        let origin = self
            .base_origin
            .clone()
            .unwrap_or_else(|| vec![0.0; self.d]);
        let exponent = self.base_exponent.unwrap_or(0);
        let lattice = Arc::new(DyadicLattice::build(
            self.d, self.l, &origin, exponent, &[], None,
        )?);
        let weight = match (&self.descriptor, &self.cells) {
            (Some(desc), None) => MatrixWeight::from_descriptor(lattice.clone(), desc)?,
            (None, Some(cells)) => {
                let mats: Result<Vec<Mat>> =
                    cells.iter().map(|rows| Mat::from_rows(rows)).collect();
                MatrixWeight::from_cells(lattice.clone(), mats?, WeightDescriptor::None)?
            }
            _ => {
                return Err(Error::config(
                    "weight file needs exactly one of descriptor or cells",
                ))
            }
        };
        if weight.n() != self.n {
            return Err(Error::config(format!(
                "weight file declares n={}, data has n={}",
                self.n,
                weight.n()
            )));
        }
        Ok((lattice, weight))
    }

    pub fn from_weight(w: &MatrixWeight) -> Self {
        let lat = w.lattice();
        WeightFile {
            d: lat.d(),
            n: w.n(),
            l: lat.level_max(),
            base_origin: Some(lat.base_origin().to_vec()),
            base_exponent: Some(lat.base_exponent()),
            descriptor: None,
            cells: Some(w.cells.iter().map(|m| m.mat().rows()).collect()),
        }
    }
}

/// Random matrix A_p weights with characteristic at most `char_cap`:
/// exponentiated dyadic martingales in the eigenvalues, mixed by a
/// rotation field, with amplitudes shrunk until the cap holds. Returns
/// each weight with its measured characteristic.
pub fn random_a2_family(
    lattice: &Arc<DyadicLattice>,
    n: usize,
    count: usize,
    seed: u64,
    p: f64,
    char_cap: f64,
) -> Result<Vec<(MatrixWeight, f64)>> {
    if n == 0 || n > 3 {
        return Err(Error::validation("family generator supports n in 1..=3"));
    }
    if char_cap <= 1.0 {
        return Err(Error::validation("char_cap must exceed 1"));
    }
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let member_seed = seed ^ (k as u64).wrapping_mul(0x9e3779b97f4a7c15);
        let mut amp = 1.0f64;
        let mut accepted = None;
        for _ in 0..30 {
            let w = random_log_martingale_weight(lattice, n, member_seed, amp)?;
            let chi = ap_characteristic(&w, p, lattice, DEFAULT_PAIR_CAP)?;
            if chi.value <= char_cap {
                accepted = Some((w, chi.value));
                break;
            }
            amp *= 0.7;
        }
        match accepted {
            Some(pair) => out.push(pair),
            None => {
                return Err(Error::resource(format!(
                    "family member {k} did not reach characteristic cap {char_cap}"
                )))
            }
        }
    }
    Ok(out)
}

/// One weight: eigenvalue logs are dyadic martingales (random +/- delta
/// per cube, delta decaying geometrically in depth), rotated by an
/// angle field built the same way.
fn random_log_martingale_weight(
    lattice: &Arc<DyadicLattice>,
    n: usize,
    seed: u64,
    amp: f64,
) -> Result<MatrixWeight> {
    let fields: Vec<Vec<f64>> = (0..n + 1)
        .map(|comp| dyadic_martingale(lattice, seed ^ (comp as u64) << 32, amp))
        .collect();
    let cells: Vec<Mat> = (0..lattice.cell_count())
        .map(|cell| {
            let eigs: Vec<f64> = (0..n).map(|i| fields[i][cell].exp()).collect();
            let d = Mat::diag(&eigs);
            if n == 1 {
                d
            } else {
                let theta = fields[n][cell];
                let q = rotation(n, theta);
                q.mul(&d).mul(&q.transpose()).symmetrized()
            }
        })
        .collect();
    MatrixWeight::from_cells(
        lattice.clone(),
        cells,
        WeightDescriptor::Custom(format!("random-a2:seed={seed},amp={amp:.4}")),
    )
}

/// Per-cell values of a random dyadic martingale: descend the cube tree
/// adding +/- amp * decay^level per step.
fn dyadic_martingale(lattice: &Arc<DyadicLattice>, seed: u64, amp: f64) -> Vec<f64> {
    let decay: f64 = 0.72;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current = vec![0.0f64];
    for k in 0..lattice.level_max() {
        let cubes = lattice.cubes_at_level(k);
        let mut next = vec![0.0f64; lattice.cube_count_at_level(k + 1)];
        let step = amp * decay.powi(k as i32);
        for (ci, cube) in cubes.iter().enumerate() {
            for child in lattice.children(cube) {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let cli = lattice.cube_level_index(&child).expect("child interior");
                next[cli] = current[ci] + sign * step;
            }
        }
        current = next;
    }
    current
}

/// Rotation by theta: plane rotation in the first two coordinates (n=2)
/// composed with one in the last two (n=3).
fn rotation(n: usize, theta: f64) -> Mat {
    let mut q = Mat::identity(n);
    q.set(0, 0, theta.cos());
    q.set(0, 1, -theta.sin());
    q.set(1, 0, theta.sin());
    q.set(1, 1, theta.cos());
    if n == 3 {
        let mut r = Mat::identity(3);
        r.set(1, 1, (0.7 * theta).cos());
        r.set(1, 2, -(0.7 * theta).sin());
        r.set(2, 1, (0.7 * theta).sin());
        r.set(2, 2, (0.7 * theta).cos());
        q = q.mul(&r);
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lat(d: usize, l: usize) -> Arc<DyadicLattice> {
        Arc::new(DyadicLattice::standard(d, l).unwrap())
    }

    #[test]
    fn constant_weight_average_is_constant() {
        let lattice = lat(2, 3);
        let w = MatrixWeight::constant(lattice.clone(), Mat::diag(&[3.0, 7.0])).unwrap();
        let root = DyadicCube::new(0, [0; 3]);
        let avg = w.cell_average(&lattice, &root).unwrap();
        assert!((avg.mat().get(0, 0) - 3.0).abs() < 1e-12);
        assert!((avg.mat().get(1, 1) - 7.0).abs() < 1e-12);
    }

    #[test]
    fn two_cell_scalar_average() {
        let lattice = lat(1, 1);
        let cells = vec![Mat::diag(&[1.0]), Mat::diag(&[4.0])];
        let w = MatrixWeight::from_cells(lattice.clone(), cells, WeightDescriptor::None).unwrap();
        let root = DyadicCube::new(0, [0; 3]);
        assert_eq!(w.cell_average(&lattice, &root).unwrap().mat().get(0, 0), 2.5);
    }

    #[test]
    fn power_weight_root_average_is_exact_integral() {
        let lattice = lat(1, 6);
        let w = MatrixWeight::power1d(lattice.clone(), &[1.0]).unwrap();
        let root = DyadicCube::new(0, [0; 3]);
        let avg = w.cell_average(&lattice, &root).unwrap();
        assert!((avg.mat().get(0, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn power_cell_average_handles_origin() {
        // integral of x^(-1/2) over [0, 1/4) is 2*(1/4)^(1/2) = 1.
        assert!((power_cell_average(0.0, 0.25, -0.5) - 4.0).abs() < 1e-12);
        // Straddling cell [-h, h) of |x|^1: average is h/2.
        assert!((power_cell_average(-0.25, 0.25, 1.0) - 0.125).abs() < 1e-12);
    }

    #[test]
    fn power_weight_rejects_non_integrable_exponent() {
        let lattice = lat(1, 3);
        assert!(MatrixWeight::power1d(lattice.clone(), &[-1.0]).is_err());
        assert!(MatrixWeight::power1d(lattice, &[-1.5]).is_err());
    }

    #[test]
    fn descriptor_parsing() {
        let lattice = lat(1, 3);
        assert_eq!(
            MatrixWeight::from_descriptor(lattice.clone(), "identity:2")
                .unwrap()
                .n(),
            2
        );
        let w = MatrixWeight::from_descriptor(lattice.clone(), "power1d:0.5,-0.5").unwrap();
        assert_eq!(w.n(), 2);
        assert_eq!(w.descriptor().label(), "power1d:0.5,-0.5");
        assert!(MatrixWeight::from_descriptor(lattice.clone(), "diag:1,0").is_err());
        assert!(MatrixWeight::from_descriptor(lattice, "nope:1").is_err());
    }

    #[test]
    fn weight_file_roundtrip() {
        let lattice = lat(1, 2);
        let w = MatrixWeight::power1d(lattice, &[0.5]).unwrap();
        let file = WeightFile::from_weight(&w);
        let json = serde_json::to_string(&file).unwrap();
        let parsed: WeightFile = serde_json::from_str(&json).unwrap();
        let (_, w2) = parsed.load().unwrap();
        for cell in 0..w.lattice().cell_count() {
            assert!(
                (w.cell(cell).mat().get(0, 0) - w2.cell(cell).mat().get(0, 0)).abs() < 1e-15
            );
        }
    }

    #[test]
    fn lp_norm_oracle_diag_weight() {
        let lattice = lat(1, 4);
        let w = MatrixWeight::constant(lattice.clone(), Mat::diag(&[4.0, 1.0])).unwrap();
        let f = SampledFunction::constant(lattice, vec![1.0, 0.0]);
        assert!((lp_norm(&f, &w, 2.0).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn lp_norm_is_homogeneous() {
        let lattice = lat(1, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<Vec<f64>> = (0..lattice.cell_count())
            .map(|_| vec![rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5])
            .collect();
        let f = SampledFunction::new(lattice.clone(), data.clone()).unwrap();
        let scaled = SampledFunction::new(
            lattice.clone(),
            data.iter()
                .map(|v| v.iter().map(|x| -3.5 * x).collect())
                .collect(),
        )
        .unwrap();
        let w = MatrixWeight::power1d(lattice, &[0.5, -0.5]).unwrap();
        for p in [1.5, 2.0, 3.0] {
            let a = lp_norm(&f, &w, p).unwrap();
            let b = lp_norm(&scaled, &w, p).unwrap();
            assert!((b - 3.5 * a).abs() < 1e-9 * b.max(1.0));
        }
    }

    #[test]
    fn maximal_function_of_identity_is_one() {
        let lattice = lat(1, 4);
        let w = MatrixWeight::identity(lattice.clone(), 2);
        let b = SampledFunction::constant(lattice.clone(), Mat::identity(2));
        let m = weighted_maximal(&w, &b, 2.0, &lattice, ReducingMethod::Auto).unwrap();
        for cell in 0..lattice.cell_count() {
            assert!((m.get(cell) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn maximal_function_matches_dyadic_maximal_for_flat_weight() {
        let lattice = lat(1, 3);
        let w = MatrixWeight::identity(lattice.clone(), 1);
        let mut cells = vec![Mat::zeros(1); lattice.cell_count()];
        cells[3] = Mat::diag(&[8.0]);
        // Zero matrices are fine for the symbol; only the weight is SPD.
        let b = SampledFunction::new(lattice.clone(), cells).unwrap();
        let m = weighted_maximal(&w, &b, 2.0, &lattice, ReducingMethod::Auto).unwrap();
        // Dyadic maximal of ||B|| = 8 * 1_{cell 3}: on cell 0 the best
        // cube is [0,1/2) (mean 2) or the root (mean 1).
        assert!((m.get(3) - 8.0).abs() < 1e-12);
        assert!((m.get(0) - 2.0).abs() < 1e-12);
        assert!((m.get(7) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn family_generator_respects_char_cap() {
        let lattice = lat(1, 5);
        let fam = random_a2_family(&lattice, 2, 3, 11, 2.0, 8.0).unwrap();
        assert_eq!(fam.len(), 3);
        for (w, chi) in &fam {
            assert!(*chi <= 8.0);
            assert!(*chi >= 1.0);
            assert_eq!(w.n(), 2);
        }
        // Deterministic in the seed.
        let fam2 = random_a2_family(&lattice, 2, 3, 11, 2.0, 8.0).unwrap();
        assert_eq!(fam[0].1, fam2[0].1);
    }

    #[test]
    fn power_field_is_memoized_and_correct() {
        let lattice = lat(1, 3);
        let w = MatrixWeight::constant(lattice, Mat::diag(&[4.0, 9.0])).unwrap();
        let half = w.power_field(0.5).unwrap();
        assert!((half[0].get(0, 0) - 2.0).abs() < 1e-12);
        assert!((half[0].get(1, 1) - 3.0).abs() < 1e-12);
        let again = w.power_field(0.5).unwrap();
        assert!(Arc::ptr_eq(&half, &again));
    }
}
