//! Experiment runner. Each subcommand reads one JSON config (flags
//! override file values), runs the experiment, and emits one JSON
//! report to stdout or to --out. Exit code 0 on a clean run, 2 when an
//! advisory condition failed, 1 on error.

use std::io::Write;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use mwdha::cli::{
    append_log, load_config, log_path, run_experiment, write_atomic, ExperimentConfig,
    ExperimentReport, MatrixSpec, OperatorConfig, DEFAULT_LOG,
};

#[derive(Parser)]
#[command(name = "mwdha", version, about = "Matrix-weighted dyadic harmonic analysis experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Averaging characteristic of the weight
    ApChar(RunArgs),
    /// One-dimensional tail characteristic
    B2p(RunArgs),
    /// Reducing operators and their distortion
    Reducing(RunArgs),
    /// Weighted oscillation of a matrix symbol, all forms
    Bmo(RunArgs),
    /// Pairwise ratios between the oscillation forms
    JnEquiv(RunArgs),
    /// Stopping-time decomposition and packing table
    StoppingPacking(RunArgs),
    /// Carleson embedding against the norms expected to control it
    Carleson(RunArgs),
    /// Haar coefficients of T1 and their oscillation norm
    T1(RunArgs),
    /// Kernel size/smoothness conditions against the weight
    KernelCheck(RunArgs),
    /// Weak boundedness on adjacent cube pairs
    WbpCheck(RunArgs),
    /// Decay of adapted Haar coefficients with scale gap
    DecayCheck(RunArgs),
    /// Empirical lower bound on the weighted operator norm
    NormProbe(RunArgs),
    /// Norm growth across depth for the antidiagonal model pair
    Counterexample(RunArgs),
    /// Commutator norm probe against the symbol's oscillation
    CommutatorBmo(RunArgs),
}

impl Command {
    fn into_parts(self) -> (&'static str, RunArgs) {
        match self {
            Command::ApChar(a) => ("ap-char", a),
            Command::B2p(a) => ("b2p", a),
            Command::Reducing(a) => ("reducing", a),
            Command::Bmo(a) => ("bmo", a),
            Command::JnEquiv(a) => ("jn-equiv", a),
            Command::StoppingPacking(a) => ("stopping-packing", a),
            Command::Carleson(a) => ("carleson", a),
            Command::T1(a) => ("t1", a),
            Command::KernelCheck(a) => ("kernel-check", a),
            Command::WbpCheck(a) => ("wbp-check", a),
            Command::DecayCheck(a) => ("decay-check", a),
            Command::NormProbe(a) => ("norm-probe", a),
            Command::Counterexample(a) => ("counterexample", a),
            Command::CommutatorBmo(a) => ("commutator-bmo", a),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file; built-in defaults apply when absent
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report destination; stdout when absent
    #[arg(long)]
    out: Option<String>,
    /// Run log path; "none" disables the log
    #[arg(long)]
    log: Option<String>,
    /// Label echoed in the report
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    p: Option<f64>,
    /// Secondary exponent for self-similar forms
    #[arg(long)]
    q: Option<f64>,
    /// Lattice depth L
    #[arg(long)]
    level: Option<usize>,
    /// Ambient dimension
    #[arg(long)]
    d: Option<usize>,
    /// "identity:n", "diag:a,b", "power1d:b1,b2", "random-a2:n", "file:path"
    #[arg(long)]
    weight: Option<String>,
    /// "haar-random:seed,depth", "constant:a,b;c,d", "file:path"
    #[arg(long)]
    symbol: Option<String>,
    /// Kernel kind: hilbert, modified-hilbert, riesz
    #[arg(long)]
    kernel: Option<String>,
    /// 1-based Riesz axis
    #[arg(long)]
    axis: Option<usize>,
    /// Kernel matrix shape: identity, antidiag, zero, diag:a,b
    #[arg(long)]
    matrix: Option<String>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    c_equiv: Option<f64>,
    #[arg(long)]
    r_levels: Option<u32>,
    #[arg(long)]
    q_star_factor: Option<f64>,
    #[arg(long)]
    ensemble_size: Option<usize>,
    #[arg(long)]
    mvee_tol: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Depths for growth experiments, comma separated
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<usize>>,
    #[arg(long)]
    family_count: Option<usize>,
    #[arg(long)]
    char_cap: Option<f64>,
    #[arg(long)]
    goodness_gap: Option<u32>,
    #[arg(long)]
    max_scale_gap: Option<usize>,
    #[arg(long)]
    triples_per_cube: Option<usize>,
    #[arg(long)]
    pair_cap: Option<usize>,
}

impl RunArgs {
    fn merge_into(self, cfg: &mut ExperimentConfig) {
        if let Some(v) = self.out {
            cfg.out = Some(v);
        }
        if let Some(v) = self.log {
            cfg.log = Some(v);
        }
        if let Some(v) = self.name {
            cfg.name = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.p {
            cfg.p = v;
        }
        if let Some(v) = self.q {
            cfg.knobs.q = Some(v);
        }
        if let Some(v) = self.level {
            cfg.lattice.level = v;
        }
        if let Some(v) = self.d {
            cfg.lattice.d = v;
        }
        if let Some(v) = self.weight {
            cfg.weight = v;
        }
        if let Some(v) = self.symbol {
            cfg.symbol = Some(v);
        }
        if self.kernel.is_some() || self.axis.is_some() || self.matrix.is_some() {
            let op = cfg
                .operator
                .get_or_insert_with(|| OperatorConfig::default_for_dimension(cfg.lattice.d));
            if let Some(v) = self.kernel {
                op.kind = v;
            }
            if let Some(v) = self.axis {
                op.axis = v;
            }
            if let Some(v) = self.matrix {
                op.matrix = MatrixSpec::Tag(v);
            }
        }
        if let Some(v) = self.lambda1 {
            cfg.knobs.lambda1 = v;
        }
        if let Some(v) = self.lambda2 {
            cfg.knobs.lambda2 = Some(v);
        }
        if let Some(v) = self.c_equiv {
            cfg.knobs.c_equiv = v;
        }
        if let Some(v) = self.r_levels {
            cfg.knobs.r_levels = Some(v);
        }
        if let Some(v) = self.q_star_factor {
            cfg.knobs.q_star_factor = Some(v);
        }
        if let Some(v) = self.ensemble_size {
            cfg.knobs.ensemble_size = v;
        }
        if let Some(v) = self.mvee_tol {
            cfg.knobs.mvee_tol = v;
        }
        if let Some(v) = self.beta {
            cfg.knobs.beta = v;
        }
        if let Some(v) = self.levels {
            cfg.knobs.levels = v;
        }
        if let Some(v) = self.family_count {
            cfg.knobs.family_count = v;
        }
        if let Some(v) = self.char_cap {
            cfg.knobs.char_cap = v;
        }
        if let Some(v) = self.goodness_gap {
            cfg.knobs.goodness_gap = v;
        }
        if let Some(v) = self.max_scale_gap {
            cfg.knobs.max_scale_gap = v;
        }
        if let Some(v) = self.triples_per_cube {
            cfg.knobs.triples_per_cube = v;
        }
        if let Some(v) = self.pair_cap {
            cfg.knobs.pair_cap = v;
        }
    }
}

fn execute(subcommand: &str, args: RunArgs) -> mwdha::Result<ExperimentReport> {
    let mut cfg = match &args.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    args.merge_into(&mut cfg);
    if cfg.log.is_none() {
        cfg.log = Some(DEFAULT_LOG.to_string());
    }
    let report = run_experiment(subcommand, cfg)?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    match report.config.out.as_deref() {
        Some(path) => write_atomic(path, text.as_bytes())?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
        }
    }
    if let Some(log) = log_path(&report.config) {
        append_log(&log, &report)?;
    }
    Ok(report)
}

fn run() -> i32 {
    mwdha::cli::init_threads();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let (subcommand, args) = cli.command.into_parts();
    match execute(subcommand, args) {
        Ok(report) => {
            if report.ok {
                0
            } else {
                2
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn main() {
    std::process::exit(run());
}
