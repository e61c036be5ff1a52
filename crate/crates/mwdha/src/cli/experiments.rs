//! One function per experiment, plus the builders that turn config
//! strings into lattices, weights, kernels, and symbols. Experiments
//! write the values they actually used back into the config so the
//! echoed copy has no hidden defaults.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde_json::{json, Value};

use super::{ExperimentConfig, LatticeConfig, MatrixSpec, OperatorConfig, Outcome};
use crate::analysis::{
    bmo_report_with_field, bmo_trace_check_with_field, carleson_embedding_check,
    random_carleson_sequence, random_haar_symbol, random_haar_vector, stopping_time_with_field,
    suggested_lambda2, symmetric_ratio, vector_bmo, vector_bmo_with_field, CubeAddress,
    VectorBmoForm,
};
use crate::dyadic::sampled::SampledFunction;
use crate::dyadic::DyadicLattice;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::operators::{
    compat_check_with_field, compute_t1, counterexample_growth, default_r_levels,
    empirical_commutator_norm, empirical_operator_norm, haar_decay_check, kernel_condition_check,
    t1_bmo_norm_with_field, weak_boundedness_check_with_field, KernelDescriptor, Quantiles,
    T1Options,
};
use crate::weights::{
    ap_characteristic, b2p_characteristic, random_a2_family, MatrixWeight, ReducingField,
    ReducingMethod, WeightFile,
};

pub(crate) fn dispatch(subcommand: &str, cfg: &mut ExperimentConfig) -> Result<Outcome> {
    match subcommand {
        "ap-char" => ap_char(cfg),
        "b2p" => b2p(cfg),
        "reducing" => reducing(cfg),
        "bmo" => bmo(cfg),
        "jn-equiv" => jn_equiv(cfg),
        "stopping-packing" => stopping_packing(cfg),
        "carleson" => carleson(cfg),
        "t1" => t1(cfg),
        "kernel-check" => kernel_check(cfg),
        "wbp-check" => wbp_check(cfg),
        "decay-check" => decay_check(cfg),
        "norm-probe" => norm_probe(cfg),
        "counterexample" => counterexample(cfg),
        "commutator-bmo" => commutator_bmo(cfg),
        other => Err(Error::config(format!("unknown experiment '{other}'"))),
    }
}

impl MatrixSpec {
    fn to_mat(&self, n: usize) -> Result<Mat> {
        let m = match self {
            MatrixSpec::Tag(tag) => match tag.as_str() {
                "identity" => Mat::identity(n),
                "zero" => Mat::zeros(n),
                "antidiag" => {
                    let mut m = Mat::zeros(n);
                    for i in 0..n {
                        m.set(i, n - 1 - i, 1.0);
                    }
                    m
                }
                other => {
                    let entries = other.strip_prefix("diag:").ok_or_else(|| {
                        Error::config(format!("operator.matrix: unknown shape '{other}'"))
                    })?;
                    Mat::diag(&parse_f64_list(entries, "operator.matrix")?)
                }
            },
            MatrixSpec::Rows(rows) => Mat::from_rows(rows)
                .map_err(|e| Error::config(format!("operator.matrix: {e}")))?,
        };
        if m.n() != n {
            return Err(Error::config(format!(
                "operator.matrix: is {}x{} but the weight is {n}x{n}",
                m.n(),
                m.n()
            )));
        }
        Ok(m)
    }
}

fn parse_f64_list(s: &str, field: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::config(format!("{field}: '{t}' is not a number")))
        })
        .collect()
}

fn build_lattice(lc: &mut LatticeConfig) -> Result<Arc<DyadicLattice>> {
    let origin = lc.origin.get_or_insert_with(|| vec![0.0; lc.d]).clone();
    let mut shifts = Vec::with_capacity(lc.shifts.len());
    for (i, row) in lc.shifts.iter().enumerate() {
        if row.len() > 3 {
            return Err(Error::config(format!(
                "lattice.shifts[{i}]: at most 3 axis bits per level"
            )));
        }
        let mut bits = [0u8; 3];
        for (j, &b) in row.iter().enumerate() {
            if b > 1 {
                return Err(Error::config(format!(
                    "lattice.shifts[{i}][{j}]: shift bits are 0 or 1"
                )));
            }
            bits[j] = b;
        }
        shifts.push(bits);
    }
    let lattice =
        DyadicLattice::build(lc.d, lc.level, &origin, lc.base_exponent, &shifts, None)
            .map_err(|e| Error::config(format!("lattice: {e}")))?;
    Ok(Arc::new(lattice))
}

fn build_weight(cfg: &mut ExperimentConfig) -> Result<(Arc<DyadicLattice>, MatrixWeight)> {
    if let Some(path) = cfg.weight.strip_prefix("file:") {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("weight: cannot read '{path}': {e}")))?;
        let wf: WeightFile = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("weight: '{path}': {e}")))?;
        let (lattice, w) = wf.load()?;
        cfg.lattice = LatticeConfig {
            d: lattice.d(),
            level: lattice.level_max(),
            origin: Some(lattice.base_origin().to_vec()),
            base_exponent: lattice.base_exponent(),
            shifts: Vec::new(),
        };
        return Ok((lattice, w));
    }
    let lattice = build_lattice(&mut cfg.lattice)?;
    if let Some(rest) = cfg.weight.strip_prefix("random-a2") {
        let n = match rest.strip_prefix(':') {
            Some(v) => v
                .parse::<usize>()
                .map_err(|_| Error::config(format!("weight: '{v}' is not a dimension")))?,
            None if rest.is_empty() => 2,
            None => return Err(Error::config(format!("weight: unknown descriptor '{}'", cfg.weight))),
        };
        let member = random_a2_family(&lattice, n, 1, cfg.seed, cfg.p, cfg.knobs.char_cap)?
            .into_iter()
            .next()
            .expect("family of one member");
        return Ok((lattice, member.0));
    }
    let w = MatrixWeight::from_descriptor(lattice.clone(), &cfg.weight)
        .map_err(|e| Error::config(format!("weight: {e}")))?;
    Ok((lattice, w))
}

fn build_kernel(cfg: &mut ExperimentConfig, d: usize, n: usize) -> Result<KernelDescriptor> {
    let op = cfg
        .operator
        .get_or_insert_with(|| OperatorConfig::default_for_dimension(d));
    let matrix = op.matrix.to_mat(n)?;
    match op.kind.as_str() {
        "hilbert" => {
            if d != 1 {
                return Err(Error::config("operator.kind: hilbert needs dimension 1"));
            }
            Ok(KernelDescriptor::hilbert(matrix))
        }
        "modified-hilbert" => {
            if d != 1 {
                return Err(Error::config(
                    "operator.kind: modified-hilbert needs dimension 1",
                ));
            }
            Ok(KernelDescriptor::modified_hilbert(matrix))
        }
        "riesz" => KernelDescriptor::riesz(op.axis, d, matrix)
            .map_err(|e| Error::config(format!("operator.axis: {e}"))),
        other => Err(Error::config(format!("operator.kind: unknown kind '{other}'"))),
    }
}

fn default_symbol_depth(lattice: &DyadicLattice) -> usize {
    lattice.level_max().min(3)
}

fn build_symbol(
    cfg: &mut ExperimentConfig,
    lattice: &Arc<DyadicLattice>,
    n: usize,
) -> Result<SampledFunction<Mat>> {
    let descriptor = cfg
        .symbol
        .get_or_insert_with(|| {
            format!("haar-random:{},{}", cfg.seed, default_symbol_depth(lattice))
        })
        .clone();
    if let Some(rest) = descriptor.strip_prefix("haar-random") {
        let args = rest.trim_start_matches([':', '(']).trim_end_matches(')');
        let parts: Vec<&str> = args.split(',').map(str::trim).collect();
        if parts.len() != 2 {
            return Err(Error::config(
                "symbol: haar-random takes 'seed,depth'".to_string(),
            ));
        }
        let seed = parts[0]
            .parse::<u64>()
            .map_err(|_| Error::config(format!("symbol: '{}' is not a seed", parts[0])))?;
        let depth = parts[1]
            .parse::<usize>()
            .map_err(|_| Error::config(format!("symbol: '{}' is not a depth", parts[1])))?;
        return random_haar_symbol(lattice, n, depth, seed);
    }
    if let Some(rows) = descriptor.strip_prefix("constant:") {
        let rows: Vec<Vec<f64>> = rows
            .split(';')
            .map(|r| parse_f64_list(r, "symbol"))
            .collect::<Result<_>>()?;
        let m = Mat::from_rows(&rows).map_err(|e| Error::config(format!("symbol: {e}")))?;
        if m.n() != n {
            return Err(Error::config(format!(
                "symbol: is {}x{} but the weight is {n}x{n}",
                m.n(),
                m.n()
            )));
        }
        return Ok(SampledFunction::constant(lattice.clone(), m));
    }
    if let Some(path) = descriptor.strip_prefix("file:") {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("symbol: cannot read '{path}': {e}")))?;
        let cells: Vec<Vec<Vec<f64>>> = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("symbol: '{path}': {e}")))?;
        let mats: Vec<Mat> = cells
            .iter()
            .map(|rows| {
                let m = Mat::from_rows(rows).map_err(|e| Error::config(format!("symbol: {e}")))?;
                if m.n() != n {
                    return Err(Error::config(format!(
                        "symbol: cell matrix is {}x{} but the weight is {n}x{n}",
                        m.n(),
                        m.n()
                    )));
                }
                Ok(m)
            })
            .collect::<Result<_>>()?;
        return SampledFunction::new(lattice.clone(), mats);
    }
    Err(Error::config(format!("symbol: unknown descriptor '{descriptor}'")))
}

fn reducing_field(
    cfg: &ExperimentConfig,
    w: &MatrixWeight,
    lattice: &Arc<DyadicLattice>,
) -> Result<ReducingField> {
    ReducingField::compute_with_tol(w, lattice, cfg.p, ReducingMethod::Auto, cfg.knobs.mvee_tol)
}

fn resolve_q(cfg: &mut ExperimentConfig) -> f64 {
    let q = cfg.knobs.q.unwrap_or(cfg.p);
    cfg.knobs.q = Some(q);
    q
}

fn resolve_t1_options(cfg: &mut ExperimentConfig, lattice: &DyadicLattice) -> T1Options {
    let defaults = T1Options::for_lattice(lattice);
    let r_levels = cfg.knobs.r_levels.unwrap_or_else(|| default_r_levels(lattice.level_max()));
    let q_star_factor = cfg.knobs.q_star_factor.unwrap_or(defaults.q_star_factor);
    cfg.knobs.r_levels = Some(r_levels);
    cfg.knobs.q_star_factor = Some(q_star_factor);
    T1Options { r_levels, q_star_factor }
}

fn outcome(results: Value, methods: &[(&str, &str)], advisories: Vec<String>) -> Outcome {
    Outcome {
        results,
        methods: methods
            .iter()
            .map(|&(k, v)| (k.to_string(), v.to_string()))
            .collect::<BTreeMap<_, _>>(),
        advisories,
    }
}

fn ap_char(cfg: &mut ExperimentConfig) -> Result<Outcome> {
    let (lattice, w) = build_weight(cfg)?;
    let chi = ap_characteristic(&w, cfg.p, &lattice, cfg.knobs.pair_cap)?;
    let method = if chi.subsampled_cubes == 0 { "exact_double_sum" } else { "stratified_subsample" };
    Ok(outcome(
        json!({
            "value": chi.value,
            "attaining": CubeAddress::of(&chi.attaining_cube, lattice.d()),
            "sampling_error": chi.sampling_error,
            "subsampled_cubes": chi.subsampled_cubes,
        }),
        &[("value", method)],
        Vec::new(),
    ))
}

fn b2p(cfg: &mut ExperimentConfig) -> Result<Outcome> {
    let (lattice, w) = build_weight(cfg)?;
    let field = reducing_field(cfg, &w, &lattice)?;
    let tail = b2p_characteristic(&w, &field, cfg.p)?;
    Ok(outcome(
        json!({
            "value": tail.value,
            "attaining": CubeAddress::of(&tail.attaining_cube, lattice.d()),
            "truncation_deficit": tail.truncation_deficit,
        }),
        &[("value", "reducing_tail_sum"), ("reducing", field.method().label())],
        Vec::new(),
    ))
}

fn reducing(cfg: &mut ExperimentConfig) -> Result<Outcome> {
    let (lattice, w) = build_weight(cfg)?;
    let field = reducing_field(cfg, &w, &lattice)?;
    let distortions: Vec<f64> = field.pairs().iter().map(|pr| pr.distortion).collect();
    let worst = field
        .pairs()
        .iter()
        .max_by(|a, b| a.distortion.total_cmp(&b.distortion))
        .expect("at least the root pair");
    let root = lattice.cubes_at_level(0)[0];
    let root_pair = field.get(&root)?;
    Ok(outcome(
        json!({
            "distortion": Quantiles::from_samples(distortions),
            "worst": {
                "cube": CubeAddress::of(&worst.cube, lattice.d()),
                "distortion": worst.distortion,
            },
            "root": {
                "v": root_pair.v.mat().rows(),
                "v_dual": root_pair.v_dual.mat().rows(),
            },
        }),
        &[("v", field.method().label()), ("distortion", "sampled_directions")],
        Vec::new(),
    ))
}

fn bmo(cfg: &mut ExperimentConfig) -> Result<Outcome> {
    let q = resolve_q(cfg);
    let (lattice, w) = build_weight(cfg)?;
    let b = build_symbol(cfg, &lattice, w.n())?;
    let field = reducing_field(cfg, &w, &lattice)?;
    let report = bmo_report_with_field(&b, &w, &field, q, cfg.knobs.c_equiv)?;
    let trace = bmo_trace_check_with_field(&b, &field)?;
    let mut advisories = Vec::new();
    if !report.comparable {
        advisories.push(format!(
            "bmo-forms-not-comparable(max_ratio={:.3e})",
            report.max_ratio
        ));
    }
    Ok(outcome(
        json!({ "oscillation": report, "trace": trace }),
        &[("oscillation", "exact_cell_sums"), ("reducing", field.method().label())],
        advisories,
    ))
}

fn jn_equiv(cfg: &mut ExperimentConfig) -> Result<Outcome> {
    let q = resolve_q(cfg);
    let (lattice, w) = build_weight(cfg)?;
    let b = build_symbol(cfg, &lattice, w.n())?;
    let field = reducing_field(cfg, &w, &lattice)?;
    let report = bmo_report_with_field(&b, &w, &field, q, cfg.knobs.c_equiv)?;
    let pp = cfg.p / (cfg.p - 1.0);
    let f = random_haar_vector(&lattice, w.n(), default_symbol_depth(&lattice), cfg.seed + 1)?;
    let vec_reducing = vector_bmo_with_field(&f, &w, &field, pp, VectorBmoForm::Reducing)?;
    let vec_dual = vector_bmo(&f, &w, cfg.p, pp, VectorBmoForm::DualWeight)?;
    let vec_ratio = symmetric_ratio(vec_reducing, vec_dual);
    let mut advisories = Vec::new();
    if !report.comparable {
        advisories.push(format!(
            "bmo-forms-not-comparable(max_ratio={:.3e})",
            report.max_ratio
        ));
    }
    if vec_ratio > cfg.knobs.c_equiv {
        advisories.push(format!("vector-forms-not-comparable(ratio={vec_ratio:.3e})"));
    }
    Ok(outcome(
        json!({
            "matrix": report,
            "vector": { "reducing": vec_reducing, "dual_weight": vec_dual, "ratio": vec_ratio },
        }),
        &[("oscillation", "exact_cell_sums"), ("reducing", field.method().label())],
        advisories,
    ))
}

fn stopping_packing(cfg: &mut ExperimentConfig) -> Result<Outcome> {
    let family = cfg.weight.starts_with("random-a2");
    let mut members: Vec<(MatrixWeight, f64)> = Vec::new();
    let lattice;
    if family {
        lattice = build_lattice(&mut cfg.lattice)?;
        let n = match cfg.weight.strip_prefix("random-a2").unwrap().strip_prefix(':') {
            Some(v) => v
                .parse::<usize>()
                .map_err(|_| Error::config(format!("weight: '{v}' is not a dimension")))?,
            None => 2,
        };
        members = random_a2_family(
            &lattice,
            n,
            cfg.knobs.family_count,
            cfg.seed,
            cfg.p,
            cfg.knobs.char_cap,
        )?;
    } else {
        let (lat, w) = build_weight(cfg)?;
        let chi = ap_characteristic(&w, cfg.p, &lat, cfg.knobs.pair_cap)?;
        members.push((w, chi.value));
        lattice = lat;
    }
    let root = lattice.cubes_at_level(0)[0];
    let mut rows = Vec::new();
    let mut advisories = Vec::new();
    let mut method_label = "auto";
    for (k, (w, chi)) in members.iter().enumerate() {
        let lambda2 = cfg.knobs.lambda2.unwrap_or_else(|| suggested_lambda2(*chi, cfg.p));
        let field = reducing_field(cfg, w, &lattice)?;
        method_label = field.method().label();
        let tree = stopping_time_with_field(&field, &root, cfg.knobs.lambda1, lambda2)?;
        let packing = tree.packing_rows();
        for row in &packing {
            if !row.pass {
                advisories.push(format!("packing-bound-violated(weight={k},j={})", row.j));
            }
        }
        rows.push(json!({
            "weight": k,
            "ap_characteristic": chi,
            "lambda1": cfg.knobs.lambda1,
            "lambda2": lambda2,
            "generations": tree.generation_count(),
            "packing": packing,
        }));
    }
    if !family {
        let chi = members[0].1;
        cfg.knobs.lambda2 =
            Some(cfg.knobs.lambda2.unwrap_or_else(|| suggested_lambda2(chi, cfg.p)));
    }
    Ok(outcome(
        json!({ "weights": rows }),
        &[("packing_measure", "exact_dyadic_sum"), ("reducing", method_label)],
        advisories,
    ))
}

fn carleson(cfg: &mut ExperimentConfig) -> Result<Outcome> {
    let family = cfg.weight.starts_with("random-a2");
    let trials = cfg.knobs.family_count;
    let mut rows = Vec::new();
    let mut max_ratio = 0.0f64;
    let lattice;
    let mut members: Vec<MatrixWeight> = Vec::new();
    if family {
        lattice = build_lattice(&mut cfg.lattice)?;
        let n = match cfg.weight.strip_prefix("random-a2").unwrap().strip_prefix(':') {
            Some(v) => v
                .parse::<usize>()
                .map_err(|_| Error::config(format!("weight: '{v}' is not a dimension")))?,
            None => 2,
        };
        members = random_a2_family(&lattice, n, trials, cfg.seed, cfg.p, cfg.knobs.char_cap)?
            .into_iter()
            .map(|(w, _)| w)
            .collect();
    } else {
        let (lat, w) = build_weight(cfg)?;
        lattice = lat;
        members.push(w);
    }
    let depth = default_symbol_depth(&lattice);
    for t in 0..trials {
        let w = &members[t % members.len()];
        let b = random_haar_symbol(&lattice, w.n(), depth, cfg.seed.wrapping_add(t as u64))?;
        let lam = random_carleson_sequence(
            &lattice,
            w.n(),
            depth,
            cfg.seed.wrapping_add(1000 + t as u64),
        )?;
        let report = carleson_embedding_check(&lam, &b, w, cfg.p)?;
        max_ratio = max_ratio.max(report.ratio);
        rows.push(report);
    }
    Ok(outcome(
        json!({ "rows": rows, "max_ratio": max_ratio }),
        &[("lhs", "exact_cell_sum"), ("reducing", "auto")],
        Vec::new(),
    ))
}

fn t1(cfg: &mut ExperimentConfig) -> Result<Outcome> {
    let (lattice, w) = build_weight(cfg)?;
    let k = build_kernel(cfg, lattice.d(), w.n())?;
    let opts = resolve_t1_options(cfg, &lattice);
    let out = compute_t1(&k, &lattice, &opts)?;
    let out_star = compute_t1(&k.adjoint(), &lattice, &opts)?;
    let field = reducing_field(cfg, &w, &lattice)?;
    let bmo_norm = t1_bmo_norm_with_field(&out.coeffs, &field)?;
    let bmo_norm_star = t1_bmo_norm_with_field(&out_star.coeffs, &field)?;
    let quadrature = if lattice.d() == 1 { "closed_form_log_integrals" } else { "cell_center_pv" };
    Ok(outcome(
        json!({
            "t1": {
                "max_coeff_norm": out.max_coeff_norm,
                "tail_bounds": out.tail_bounds,
                "bmo_norm": bmo_norm,
            },
            "t1_star": {
                "max_coeff_norm": out_star.max_coeff_norm,
                "tail_bounds": out_star.tail_bounds,
                "bmo_norm": bmo_norm_star,
            },
        }),
        &[
            ("quadrature", quadrature),
            ("bmo_norm", "haar_mass_sup"),
            ("reducing", field.method().label()),
        ],
        Vec::new(),
    ))
}

fn kernel_check(cfg: &mut ExperimentConfig) -> Result<Outcome> {
    let (lattice, w) = build_weight(cfg)?;
    let k = build_kernel(cfg, lattice.d(), w.n())?;
    let cond = kernel_condition_check(
        &k,
        &w,
        cfg.p,
        &lattice,
        ReducingMethod::Auto,
        cfg.knobs.triples_per_cube,
        cfg.seed,
    )?;
    let field = reducing_field(cfg, &w, &lattice)?;
    let compat = compat_check_with_field(k.matrix(), &field)?;
    Ok(outcome(
        json!({ "condition": cond, "compat": compat }),
        &[
            ("holder", "sampled_triples"),
            ("compat", "level_sup"),
            ("reducing", field.method().label()),
        ],
        Vec::new(),
    ))
}

fn wbp_check(cfg: &mut ExperimentConfig) -> Result<Outcome> {
    let (lattice, w) = build_weight(cfg)?;
    let k = build_kernel(cfg, lattice.d(), w.n())?;
    let field = reducing_field(cfg, &w, &lattice)?;
    let report = weak_boundedness_check_with_field(&k, &field)?;
    Ok(outcome(
        serde_json::to_value(&report)?,
        &[("sup", "adjacent_pair_scan"), ("reducing", field.method().label())],
        Vec::new(),
    ))
}

fn decay_check(cfg: &mut ExperimentConfig) -> Result<Outcome> {
    let (lattice, w) = build_weight(cfg)?;
    let k = build_kernel(cfg, lattice.d(), w.n())?;
    let opts = resolve_t1_options(cfg, &lattice);
    let root = lattice.cubes_at_level(0)[0];
    let report = haar_decay_check(
        &k,
        &w,
        cfg.p,
        &root,
        &lattice,
        ReducingMethod::Auto,
        cfg.knobs.max_scale_gap,
        cfg.knobs.goodness_gap,
        &opts,
    )?;
    Ok(outcome(
        serde_json::to_value(&report)?,
        &[("coefficients", "truncated_haar_pairing"), ("reducing", "auto")],
        Vec::new(),
    ))
}

fn norm_probe(cfg: &mut ExperimentConfig) -> Result<Outcome> {
    let (lattice, w) = build_weight(cfg)?;
    let k = build_kernel(cfg, lattice.d(), w.n())?;
    let probe = empirical_operator_norm(&k, &w, cfg.p, cfg.knobs.ensemble_size, cfg.seed)?;
    Ok(outcome(
        serde_json::to_value(&probe)?,
        &[("lower_bound", "adapted_haar_ensemble")],
        Vec::new(),
    ))
}

fn counterexample(cfg: &mut ExperimentConfig) -> Result<Outcome> {
    let beta = cfg.knobs.beta;
    let table = counterexample_growth(
        &cfg.knobs.levels,
        beta,
        cfg.p,
        cfg.knobs.ensemble_size,
        cfg.seed,
    )?;
    cfg.weight = format!("power1d:{beta},{}", -beta);
    cfg.operator = Some(OperatorConfig {
        kind: "hilbert".into(),
        axis: 1,
        matrix: MatrixSpec::Tag("antidiag".into()),
    });
    let first = table.rows.first().expect("at least one depth");
    let last = table.rows.last().expect("at least one depth");
    let span = (last.level - first.level) as f64;
    let (fitted_rate, oracle_rate) = if span > 0.0 {
        (
            (last.lower_bound / first.lower_bound).powf(1.0 / span),
            (last.oracle / first.oracle).powf(1.0 / span),
        )
    } else {
        (1.0, 1.0)
    };
    let model_rate = 2f64.powf(beta - 0.5);
    let mut advisories = Vec::new();
    for (i, (&pf, &of)) in table
        .probe_factors
        .iter()
        .zip(table.oracle_factors.iter())
        .enumerate()
    {
        let step = (table.rows[i + 1].level - table.rows[i].level) as f64;
        let model_factor = 2f64.powf((beta - 0.5) * step);
        if pf < model_factor {
            advisories.push(format!(
                "probe-growth-below-model(step={i},probe={pf:.4},model={model_factor:.4})"
            ));
        }
        let off = (pf / of - 1.0).abs();
        if off > 0.15 {
            advisories.push(format!(
                "probe-rate-off-oracle(step={i},relative_error={off:.4})"
            ));
        }
    }
    Ok(outcome(
        json!({
            "beta": table.beta,
            "p": table.p,
            "rows": table.rows,
            "probe_factors": table.probe_factors,
            "oracle_factors": table.oracle_factors,
            "fitted_rate_per_level": fitted_rate,
            "oracle_rate_per_level": oracle_rate,
            "model_rate_per_level": model_rate,
        }),
        &[("lower_bound", "adapted_haar_ensemble"), ("oracle", "closed_form_integral")],
        advisories,
    ))
}

fn commutator_bmo(cfg: &mut ExperimentConfig) -> Result<Outcome> {
    let q = resolve_q(cfg);
    let (lattice, w) = build_weight(cfg)?;
    let k = build_kernel(cfg, lattice.d(), w.n())?;
    let b = build_symbol(cfg, &lattice, w.n())?;
    let probe = empirical_commutator_norm(&k, &b, &w, cfg.p, cfg.knobs.ensemble_size, cfg.seed)?;
    let field = reducing_field(cfg, &w, &lattice)?;
    let report = bmo_report_with_field(&b, &w, &field, q, cfg.knobs.c_equiv)?;
    let ratio = if report.defining > 0.0 {
        Some(probe.lower_bound / report.defining)
    } else {
        None
    };
    let mut advisories = Vec::new();
    if !report.comparable {
        advisories.push(format!(
            "bmo-forms-not-comparable(max_ratio={:.3e})",
            report.max_ratio
        ));
    }
    Ok(outcome(
        json!({ "probe": probe, "bmo": report, "bound_over_bmo": ratio }),
        &[
            ("lower_bound", "adapted_haar_ensemble"),
            ("oscillation", "exact_cell_sums"),
            ("reducing", field.method().label()),
        ],
        advisories,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(weight: &str, level: usize) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.weight = weight.into();
        cfg.lattice.level = level;
        cfg
    }

    #[test]
    fn matrix_specs_cover_tags_and_rows() {
        assert_eq!(MatrixSpec::Tag("identity".into()).to_mat(2).unwrap(), Mat::identity(2));
        let anti = MatrixSpec::Tag("antidiag".into()).to_mat(2).unwrap();
        assert_eq!(anti.get(0, 1), 1.0);
        assert_eq!(anti.get(0, 0), 0.0);
        let diag = MatrixSpec::Tag("diag:1,2".into()).to_mat(2).unwrap();
        assert_eq!(diag.get(1, 1), 2.0);
        let rows = MatrixSpec::Rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(rows.to_mat(2).unwrap().get(1, 0), 3.0);
        assert!(MatrixSpec::Tag("diag:1,2".into()).to_mat(3).is_err());
        assert!(MatrixSpec::Tag("sparkle".into()).to_mat(2).is_err());
    }

    #[test]
    fn weight_files_override_the_configured_lattice() {
        let lattice = Arc::new(DyadicLattice::with_base(1, 3, &[-2.0], 2).unwrap());
        let w = MatrixWeight::power1d(lattice, &[0.6, -0.6]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        std::fs::write(&path, serde_json::to_string(&WeightFile::from_weight(&w)).unwrap())
            .unwrap();
        let mut cfg = config(&format!("file:{}", path.display()), 8);
        let (lat, back) = build_weight(&mut cfg).unwrap();
        assert_eq!(lat.level_max(), 3);
        assert_eq!(cfg.lattice.level, 3);
        assert_eq!(cfg.lattice.origin, Some(vec![-2.0]));
        assert_eq!(cfg.lattice.base_exponent, 2);
        assert_eq!(back.n(), 2);
    }

    #[test]
    fn symbol_descriptors_parse_both_forms() {
        let mut cfg = config("identity:2", 4);
        let lattice = build_lattice(&mut cfg.lattice).unwrap();
        cfg.symbol = Some("haar-random:9,2".into());
        let a = build_symbol(&mut cfg, &lattice, 2).unwrap();
        cfg.symbol = Some("haar-random(9, 2)".into());
        let b = build_symbol(&mut cfg, &lattice, 2).unwrap();
        assert_eq!(a.data(), b.data());
        cfg.symbol = Some("constant:1,0;0,2".into());
        let c = build_symbol(&mut cfg, &lattice, 2).unwrap();
        assert_eq!(c.get(0).get(1, 1), 2.0);
        cfg.symbol = Some("constant:1,0".into());
        assert!(build_symbol(&mut cfg, &lattice, 2).is_err());
    }

    #[test]
    fn default_symbols_are_echoed_into_the_config() {
        let mut cfg = config("identity:2", 4);
        let lattice = build_lattice(&mut cfg.lattice).unwrap();
        build_symbol(&mut cfg, &lattice, 2).unwrap();
        assert_eq!(cfg.symbol.as_deref(), Some("haar-random:17,3"));
    }

    #[test]
    fn shift_rows_are_validated() {
        let mut cfg = config("identity:1", 3);
        cfg.lattice.shifts = vec![vec![2]];
        let err = build_lattice(&mut cfg.lattice).unwrap_err().to_string();
        assert!(err.contains("lattice.shifts[0][0]"), "{err}");
        cfg.lattice.shifts = vec![vec![0, 0, 0, 0]];
        let err = build_lattice(&mut cfg.lattice).unwrap_err().to_string();
        assert!(err.contains("lattice.shifts[0]"), "{err}");
    }

    #[test]
    fn experiments_resolve_optional_knobs_into_the_echo() {
        let mut cfg = config("power1d:0.5,-0.5", 5);
        let out = dispatch("t1", &mut cfg).unwrap();
        assert!(out.advisories.is_empty());
        assert_eq!(cfg.knobs.r_levels, Some(4));
        assert!(cfg.knobs.q_star_factor.is_some());
        assert!(cfg.operator.is_some());
    }

    #[test]
    fn stopping_packing_runs_a_generated_family() {
        let mut cfg = config("random-a2:2", 5);
        cfg.knobs.family_count = 2;
        cfg.knobs.char_cap = 20.0;
        let out = dispatch("stopping-packing", &mut cfg).unwrap();
        let rows = out.results["weights"].as_array().unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0]["lambda2"].as_f64().unwrap() > 1.0);
    }

    #[test]
    fn counterexample_rewrites_the_echo_to_what_ran() {
        let mut cfg = config("identity:1", 4);
        cfg.knobs.levels = vec![3, 4];
        cfg.knobs.ensemble_size = 16;
        let out = dispatch("counterexample", &mut cfg).unwrap();
        assert!(cfg.weight.starts_with("power1d:0.75"));
        assert!(out.results["fitted_rate_per_level"].as_f64().unwrap() > 1.0);
    }
}
