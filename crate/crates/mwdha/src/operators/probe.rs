//! Empirical lower bounds on weighted operator norms, and the growth table
//! that witnesses unboundedness when the matrix part of a kernel is
//! incompatible with the weight.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dyadic::haar::{haar_inverse, HaarCoefficients, HaarSignature};
use crate::dyadic::sampled::SampledFunction;
use crate::dyadic::{seed_mix, DyadicCube, DyadicLattice};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::weights::{lp_norm, MatrixWeight};

use super::{apply_czo, commutator_apply, KernelDescriptor};

/// One probe function with its measured norms.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeSample {
    pub label: String,
    pub input_norm: f64,
    pub output_norm: f64,
    pub ratio: f64,
}

/// Empirical lower bound for a weighted operator norm. The bound is the
/// best ratio seen over the ensemble; the true norm is at least this large.
#[derive(Debug, Clone, Serialize)]
pub struct NormProbe {
    pub lower_bound: f64,
    pub attaining: String,
    pub p: f64,
    pub ensemble_size: usize,
    pub samples: Vec<ProbeSample>,
}

/// Probes `f -> lp_norm(T f) / lp_norm(f)` over a deterministic ensemble:
/// random Haar polynomials whose coefficient at a cube depends only on the
/// cube address and the seed, plus indicator columns `W^{-1/p} e_k 1_Q`
/// adapted to the weight. Address-stable coefficients with weight `|I|`
/// make the bound comparable across lattices of different depth, and the
/// adapted columns carry the mass when the matrix part fights the weight.
pub fn empirical_operator_norm(
    k: &KernelDescriptor,
    w: &MatrixWeight,
    p: f64,
    ensemble_size: usize,
    seed: u64,
) -> Result<NormProbe> {
    let lattice = w.lattice().clone();
    k.check_lattice(&lattice)?;
    if w.n() != k.matrix().n() {
        return Err(Error::validation("weight and kernel matrix dimensions differ"));
    }
    probe_ensemble(w, p, ensemble_size, seed, |f| apply_czo(k, f, &lattice))
}

/// Same ensemble, measuring the commutator `f -> T(Bf) - B(Tf)` instead
/// of the operator itself.
pub fn empirical_commutator_norm(
    k: &KernelDescriptor,
    b: &SampledFunction<Mat>,
    w: &MatrixWeight,
    p: f64,
    ensemble_size: usize,
    seed: u64,
) -> Result<NormProbe> {
    let lattice = w.lattice().clone();
    k.check_lattice(&lattice)?;
    if w.n() != k.matrix().n() || b.get(0).n() != w.n() {
        return Err(Error::validation(
            "weight, kernel, and symbol dimensions must agree",
        ));
    }
    if !b.lattice().same_mesh(&lattice) {
        return Err(Error::validation(
            "mismatched lattice handles between symbol and weight",
        ));
    }
    probe_ensemble(w, p, ensemble_size, seed, |f| commutator_apply(k, b, f, &lattice))
}

fn probe_ensemble(
    w: &MatrixWeight,
    p: f64,
    ensemble_size: usize,
    seed: u64,
    apply: impl Fn(&SampledFunction<Vec<f64>>) -> Result<SampledFunction<Vec<f64>>>,
) -> Result<NormProbe> {
    let lattice = w.lattice().clone();
    let n = w.n();
    if ensemble_size < 16 {
        return Err(Error::validation("probe ensemble needs at least 16 random members"));
    }
    let mut samples = Vec::new();
    for member in 0..ensemble_size {
        let f = random_haar_polynomial(&lattice, n, seed, member as u64)?;
        samples.push(measure(w, p, &f, format!("haar({member})"), &apply)?);
    }
    for q in column_supports(w) {
        let cells = lattice.cube_cells(&q);
        for comp in 0..n {
            let mut data = vec![vec![0.0; n]; lattice.cell_count()];
            for &c in &cells {
                let col = w.cell(c).power(-1.0 / p)?;
                for i in 0..n {
                    data[c][i] = col.mat().get(i, comp);
                }
            }
            let f = SampledFunction::new(lattice.clone(), data)?;
            let label = format!(
                "column(l={}, c={:?}, e={})",
                q.level,
                &q.coords[..lattice.d()],
                comp
            );
            samples.push(measure(w, p, &f, label, &apply)?);
        }
    }
    let mut lower_bound = 0.0;
    let mut attaining = String::new();
    for s in &samples {
        if s.ratio > lower_bound {
            lower_bound = s.ratio;
            attaining = s.label.clone();
        }
    }
    Ok(NormProbe { lower_bound, attaining, p, ensemble_size: samples.len(), samples })
}

fn measure(
    w: &MatrixWeight,
    p: f64,
    f: &SampledFunction<Vec<f64>>,
    label: String,
    apply: &impl Fn(&SampledFunction<Vec<f64>>) -> Result<SampledFunction<Vec<f64>>>,
) -> Result<ProbeSample> {
    let input_norm = lp_norm(f, w, p)?;
    if input_norm < 1e-280 {
        return Ok(ProbeSample { label, input_norm, output_norm: 0.0, ratio: 0.0 });
    }
    let output_norm = lp_norm(&apply(f)?, w, p)?;
    Ok(ProbeSample { label, input_norm, output_norm, ratio: output_norm / input_norm })
}

/// Haar polynomial with coefficient vectors drawn per cube from a stream
/// seeded by the cube address alone. The factor `|I|` keeps per-level
/// energy summable, so deepening the lattice perturbs the function little.
fn random_haar_polynomial(
    lattice: &Arc<DyadicLattice>,
    n: usize,
    seed: u64,
    member: u64,
) -> Result<SampledFunction<Vec<f64>>> {
    let mut coeffs = HaarCoefficients::zeros(lattice.clone(), &vec![0.0; n])?;
    let sigs = HaarSignature::all(lattice.d());
    for level in 0..lattice.level_max() {
        let vol = lattice.cube_volume(level);
        for cube in lattice.cubes_at_level(level) {
            for (si, &sig) in sigs.iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(seed_mix(&[
                    seed,
                    member,
                    level as u64,
                    si as u64,
                    cube.coords[0] as u64,
                    cube.coords[1] as u64,
                    cube.coords[2] as u64,
                ]));
                let mut v = vec![0.0; n];
                for entry in v.iter_mut() {
                    *entry = rng.random_range(-1.0..1.0) * vol;
                }
                coeffs.set(&cube, sig, v)?;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed_mix(&[seed, member, u64::MAX]));
    let mean: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    coeffs.set_mean(mean);
    haar_inverse(&coeffs)
}

/// Root, its children, and shallow ancestors of the cells where the weight
/// or its inverse is largest.
fn column_supports(w: &MatrixWeight) -> Vec<DyadicCube> {
    let lattice = w.lattice();
    let root = lattice.cubes_at_level(0)[0];
    let mut supports = vec![root.clone()];
    supports.extend(lattice.children(&root));
    let mut big_cell = 0usize;
    let mut small_cell = 0usize;
    let mut big_val = f64::MIN;
    let mut small_val = f64::MIN;
    for c in 0..lattice.cell_count() {
        let vals = w.cell(c).eig().0;
        if vals[0] > big_val {
            big_val = vals[0];
            big_cell = c;
        }
        let inv = 1.0 / vals[vals.len() - 1];
        if inv > small_val {
            small_val = inv;
            small_cell = c;
        }
    }
    for cell in [big_cell, small_cell] {
        for level in [2usize, 3] {
            let level = level.min(lattice.level_max());
            if let Some(cube) = lattice.cube_of_cell(level, cell) {
                supports.push(cube);
            }
        }
    }
    supports.sort_by_key(|c| (c.level, c.coords));
    supports.dedup();
    supports
}

/// One lattice depth in a growth experiment.
#[derive(Debug, Clone, Serialize)]
pub struct GrowthRow {
    pub level: usize,
    pub lower_bound: f64,
    pub attaining: String,
    /// Exact integral of the model density over the resolvable range,
    /// `sqrt((2^{L(2b-1)} - 1) / (2b - 1))` at depth `L`.
    pub oracle: f64,
}

/// Lower bounds across lattice depth for the antidiagonal matrix part
/// against the power weight `diag(x^b, x^-b)`.
#[derive(Debug, Clone, Serialize)]
pub struct GrowthTable {
    pub beta: f64,
    pub p: f64,
    pub rows: Vec<GrowthRow>,
    /// Ratio of consecutive lower bounds.
    pub probe_factors: Vec<f64>,
    /// Ratio of consecutive oracle values.
    pub oracle_factors: Vec<f64>,
}

/// Oracle for the growth experiment: the weighted norm of the adapted
/// column is driven by the truncated integral of `x^{-2b}` near the origin,
/// which deepening the lattice extends by one dyadic scale per level.
pub fn counterexample_oracle(level_max: usize, beta: f64) -> f64 {
    let e = 2.0 * beta - 1.0;
    (((level_max as f64) * e).exp2() - 1.0) / e
}

/// Runs the norm probe on the incompatible pair (antidiagonal matrix part,
/// power weight `diag(x^b, x^-b)`) across lattice depths and tabulates the
/// growth against the exact oracle. Factors near the oracle factors witness
/// the unbounded singular integral.
pub fn counterexample_growth(
    levels: &[usize],
    beta: f64,
    p: f64,
    ensemble_size: usize,
    seed: u64,
) -> Result<GrowthTable> {
    if levels.is_empty() {
        return Err(Error::validation("growth experiment needs at least one depth"));
    }
    if !(beta > 0.5 && beta < 1.0) {
        return Err(Error::validation("growth exponent must lie strictly between 1/2 and 1"));
    }
    let a = Mat::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).expect("square rows");
    let k = KernelDescriptor::hilbert(a);
    let mut rows = Vec::new();
    for &level_max in levels {
        if level_max < 3 {
            return Err(Error::validation("growth experiment needs depth at least 3"));
        }
        let lattice = Arc::new(DyadicLattice::standard(1, level_max)?);
        let w = MatrixWeight::power1d(lattice, &[beta, -beta])?;
        let probe = empirical_operator_norm(&k, &w, p, ensemble_size, seed)?;
        rows.push(GrowthRow {
            level: level_max,
            lower_bound: probe.lower_bound,
            attaining: probe.attaining,
            oracle: counterexample_oracle(level_max, beta).sqrt(),
        });
    }
    let probe_factors =
        rows.windows(2).map(|pair| pair[1].lower_bound / pair[0].lower_bound).collect();
    let oracle_factors = rows.windows(2).map(|pair| pair[1].oracle / pair[0].oracle).collect();
    Ok(GrowthTable { beta, p, rows, probe_factors, oracle_factors })
}
