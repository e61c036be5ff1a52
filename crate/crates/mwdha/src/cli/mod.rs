//! Configuration-driven experiment runner. Every computation in the
//! crate is addressable by an experiment name plus one JSON config;
//! the result is one JSON report that echoes the fully resolved config,
//! tags each quantity with the method that produced it, and lists any
//! advisory conditions that failed.
//!
//! Reports are deterministic for a fixed config and seed, byte for byte,
//! except for the wall-time field.

mod experiments;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const CONFIG_SCHEMA: u32 = 1;

/// Default run log, appended one compact report per line.
pub const DEFAULT_LOG: &str = "mwdha-runs.jsonl";

pub const EXPERIMENTS: [&str; 14] = [
    "ap-char",
    "b2p",
    "reducing",
    "bmo",
    "jn-equiv",
    "stopping-packing",
    "carleson",
    "t1",
    "kernel-check",
    "wbp-check",
    "decay-check",
    "norm-probe",
    "counterexample",
    "commutator-bmo",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeConfig {
    pub d: usize,
    /// Depth L; the mesh has 2^(dL) cells.
    pub level: usize,
    /// Base cube corner; the origin when absent.
    pub origin: Option<Vec<f64>>,
    /// Base side 2^base_exponent.
    pub base_exponent: i32,
    /// Shift bits per level, one row of at most d bits each.
    pub shifts: Vec<Vec<u8>>,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        LatticeConfig { d: 1, level: 8, origin: None, base_exponent: 0, shifts: Vec::new() }
    }
}

/// Kernel matrix part: a named shape or explicit rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Tag(String),
    Rows(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorConfig {
    /// "hilbert", "riesz", or "modified-hilbert".
    pub kind: String,
    /// 1-based Riesz axis; ignored by the other kinds.
    pub axis: usize,
    /// "identity", "antidiag", "diag:a,b", or explicit rows.
    pub matrix: MatrixSpec,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        OperatorConfig {
            kind: "hilbert".into(),
            axis: 1,
            matrix: MatrixSpec::Tag("identity".into()),
        }
    }
}

impl OperatorConfig {
    pub fn default_for_dimension(d: usize) -> Self {
        OperatorConfig {
            kind: if d == 1 { "hilbert".into() } else { "riesz".into() },
            ..Self::default()
        }
    }
}

/// Numeric knobs shared by the experiments. Optional entries are filled
/// with their resolved values before the config is echoed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Knobs {
    pub lambda1: f64,
    /// Stopping threshold for the inverse ratio; measured-characteristic
    /// default when absent.
    pub lambda2: Option<f64>,
    pub c_equiv: f64,
    /// T1 truncation depth; lattice default when absent.
    pub r_levels: Option<u32>,
    /// Near-field dilation; 2 sqrt(d) when absent.
    pub q_star_factor: Option<f64>,
    pub ensemble_size: usize,
    pub mvee_tol: f64,
    /// Secondary exponent for self-similar forms; p when absent.
    pub q: Option<f64>,
    /// Growth exponent of the model weight.
    pub beta: f64,
    /// Lattice depths for growth experiments.
    pub levels: Vec<usize>,
    /// Members in generated weight families and triple counts.
    pub family_count: usize,
    /// Characteristic cap for generated weights.
    pub char_cap: f64,
    pub goodness_gap: u32,
    pub max_scale_gap: usize,
    pub triples_per_cube: usize,
    /// Cell-pair budget per cube before characteristic sums subsample.
    pub pair_cap: usize,
}

impl Default for Knobs {
    fn default() -> Self {
        Knobs {
            lambda1: crate::analysis::DEFAULT_LAMBDA1,
            lambda2: None,
            c_equiv: crate::analysis::DEFAULT_C_EQUIV,
            r_levels: None,
            q_star_factor: None,
            ensemble_size: 24,
            mvee_tol: crate::weights::reducing::DEFAULT_MVEE_TOL,
            q: None,
            beta: 0.75,
            levels: vec![8, 10, 12],
            family_count: 5,
            char_cap: 50.0,
            goodness_gap: 5,
            max_scale_gap: 4,
            triples_per_cube: 8,
            pair_cap: crate::weights::DEFAULT_PAIR_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    /// Label echoed in the report; the experiment name when empty.
    pub name: String,
    /// "identity:n", "diag:a,b", "power1d:b1,b2", "random-a2:n", or
    /// "file:path" (a weight file carries its own lattice).
    pub weight: String,
    pub p: f64,
    pub lattice: LatticeConfig,
    /// Kernel description; experiments that need one fill in a
    /// dimension-appropriate default.
    pub operator: Option<OperatorConfig>,
    /// "haar-random:seed,depth", "constant:a,b;c,d", or "file:path".
    pub symbol: Option<String>,
    pub seed: u64,
    /// Report destination; stdout when absent.
    pub out: Option<String>,
    /// Run log; "none" disables appending.
    pub log: Option<String>,
    pub knobs: Knobs,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema: CONFIG_SCHEMA,
            name: String::new(),
            weight: "identity:1".into(),
            p: 2.0,
            lattice: LatticeConfig::default(),
            operator: None,
            symbol: None,
            seed: 17,
            out: None,
            log: None,
            knobs: Knobs::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::config(format!(
                "schema: expected {CONFIG_SCHEMA}, got {}",
                self.schema
            )));
        }
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(Error::config("p: must lie in (1, infinity)"));
        }
        if let Some(q) = self.knobs.q {
            if !(q > 1.0 && q.is_finite()) {
                return Err(Error::config("knobs.q: must lie in (1, infinity)"));
            }
        }
        if self.knobs.lambda1 <= 1.0 {
            return Err(Error::config("knobs.lambda1: must exceed 1"));
        }
        if let Some(l2) = self.knobs.lambda2 {
            if l2 <= 1.0 {
                return Err(Error::config("knobs.lambda2: must exceed 1"));
            }
        }
        if self.knobs.c_equiv < 1.0 {
            return Err(Error::config("knobs.c_equiv: must be at least 1"));
        }
        if self.knobs.ensemble_size < 16 {
            return Err(Error::config("knobs.ensemble_size: must be at least 16"));
        }
        if !(self.knobs.mvee_tol > 0.0 && self.knobs.mvee_tol < 1.0) {
            return Err(Error::config("knobs.mvee_tol: must lie in (0, 1)"));
        }
        if self.knobs.family_count == 0 {
            return Err(Error::config("knobs.family_count: must be positive"));
        }
        if self.knobs.char_cap <= 1.0 {
            return Err(Error::config("knobs.char_cap: must exceed 1"));
        }
        if self.knobs.triples_per_cube == 0 {
            return Err(Error::config("knobs.triples_per_cube: must be positive"));
        }
        if self.knobs.pair_cap == 0 {
            return Err(Error::config("knobs.pair_cap: must be positive"));
        }
        Ok(())
    }
}

/// One experiment's payload before it is wrapped into a report.
pub(crate) struct Outcome {
    pub results: Value,
    pub methods: BTreeMap<String, String>,
    pub advisories: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema: u32,
    pub subcommand: String,
    pub name: String,
    /// False when any advisory condition failed.
    pub ok: bool,
    pub advisories: Vec<String>,
    /// Method tag per reported quantity.
    pub methods: BTreeMap<String, String>,
    pub results: Value,
    /// Fully resolved config, optional fields filled in.
    pub config: ExperimentConfig,
    pub wall_time_ms: f64,
}

/// Runs one named experiment. The config is validated, resolved (optional
/// fields filled with the values actually used), and echoed in the report.
pub fn run_experiment(subcommand: &str, mut config: ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    if config.name.is_empty() {
        config.name = subcommand.to_string();
    }
    let start = Instant::now();
    let outcome = experiments::dispatch(subcommand, &mut config)?;
    Ok(ExperimentReport {
        schema: CONFIG_SCHEMA,
        subcommand: subcommand.to_string(),
        name: config.name.clone(),
        ok: outcome.advisories.is_empty(),
        advisories: outcome.advisories,
        methods: outcome.methods,
        results: outcome.results,
        config,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Runs an experiment from a JSON config string and returns the report as
/// a JSON string; the entry point the C interface wraps.
pub fn run_experiment_json(subcommand: &str, config_json: &str) -> Result<String> {
    let config: ExperimentConfig =
        serde_json::from_str(config_json).map_err(|e| Error::config(format!("config: {e}")))?;
    let report = run_experiment(subcommand, config)?;
    Ok(serde_json::to_string_pretty(&report)?)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("config: cannot read '{}': {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::config(format!("config: '{}': {e}", path.display())))
}

/// Write-temp-then-rename, so readers never observe a partial report.
pub fn write_atomic(path: &str, bytes: &[u8]) -> Result<()> {
    let target = PathBuf::from(path);
    let mut tmp = target.clone();
    let mut name = target
        .file_name()
        .ok_or_else(|| Error::config(format!("out: '{path}' has no file name")))?
        .to_os_string();
    name.push(".tmp");
    tmp.set_file_name(name);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, &target)?;
    Ok(())
}

/// The resolved run log destination, if logging is enabled.
pub fn log_path(config: &ExperimentConfig) -> Option<PathBuf> {
    match config.log.as_deref() {
        Some("none") => None,
        Some(p) => Some(PathBuf::from(p)),
        None => Some(PathBuf::from(DEFAULT_LOG)),
    }
}

/// Appends the report as one compact JSON line.
pub fn append_log(path: &Path, report: &ExperimentReport) -> Result<()> {
    use std::io::Write;
    let mut line = serde_json::to_string(report)?;
    line.push('\n');
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(line.as_bytes())?;
    Ok(())
}

/// Caps the global thread pool from MWDHA_THREADS; later calls and
/// unparsable values are ignored.
pub fn init_threads() {
    if let Ok(v) = std::env::var("MWDHA_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}
