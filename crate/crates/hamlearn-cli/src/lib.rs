//! Command-line surface: `learn`, `qfi`, `nogo`, `eth`, `bench`, `convert`.
//!
//! Exit codes: 0 success, 1 usage, 2 configuration, 3 numerical/runtime.

pub mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use hamlearn::bench::{self, BenchConfig, Protocol};
use hamlearn::estimators::{convert_cost, ErrorMetric};
use hamlearn::eth;
use hamlearn::fisher;
use hamlearn::heisenberg;
use hamlearn::oracle::{ExperimentOracle, OracleHandle};
use hamlearn::pauli::{Axis, StabilizerProductState};
use hamlearn::sim::StatePrep;
use hamlearn::sql;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser)]
#[command(name = "hamlearn", version, about = "Hamiltonian-learning simulation laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides HAMLEARN_SEED and the config value.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format for result files.
    #[arg(long, value_enum, default_value = "csv")]
    format: OutputFormat,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// One protocol run on the configured model; prints the estimate and T.
    Learn(CommonArgs),
    /// QFI report for the configured model, state, and time.
    Qfi(CommonArgs),
    /// Spectrum-preserving directions and their information ceilings.
    Nogo(CommonArgs),
    /// ETH diagnostics report.
    Eth(CommonArgs),
    /// Scaling run over the epsilon ladder plus a slope fit.
    Bench(CommonArgs),
    /// Estimator-conversion calculator (no config file needed).
    Convert {
        #[arg(long)]
        from: MetricArg,
        #[arg(long)]
        to: MetricArg,
        /// Number of parameters.
        #[arg(long)]
        np: usize,
        #[arg(long)]
        eps: f64,
        /// Failure probability for the probabilistic metrics.
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        /// Source-estimator cost.
        #[arg(long, default_value_t = 1.0)]
        time: f64,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    #[value(name = "max-rms")]
    MaxRms,
    #[value(name = "total-rms")]
    TotalRms,
    #[value(name = "prob-2")]
    Prob2,
    #[value(name = "prob-inf")]
    ProbInf,
}

impl MetricArg {
    fn to_metric(self, delta: f64) -> ErrorMetric {
        match self {
            MetricArg::MaxRms => ErrorMetric::MaxRms,
            MetricArg::TotalRms => ErrorMetric::TotalRms,
            MetricArg::Prob2 => ErrorMetric::Prob2Norm(delta),
            MetricArg::ProbInf => ErrorMetric::ProbInfNorm(delta),
        }
    }
}

enum CliError {
    Config(String),
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Numerical(m) => m,
        }
    }
}

fn numerical<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Numerical(e.to_string())
}

/// Entry point used by both `main` and the integration tests.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // clap renders its own help/version output on stdout.
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Learn(a) => cmd_learn(&a),
        Command::Qfi(a) => cmd_qfi(&a),
        Command::Nogo(a) => cmd_nogo(&a),
        Command::Eth(a) => cmd_eth(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Convert { from, to, np, eps, delta, time } => cmd_convert(from, to, np, eps, delta, time),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

struct Loaded {
    config: config::Config,
    dir: PathBuf,
    seed: u64,
}

fn load(common: &CommonArgs) -> Result<Loaded, CliError> {
    let text = std::fs::read_to_string(&common.config).map_err(|e| {
        CliError::Config(format!("cannot read config {}: {e}", common.config.display()))
    })?;
    let config: config::Config = toml::from_str(&text).map_err(|e| {
        CliError::Config(format!("invalid config {}: {e}", common.config.display()))
    })?;
    // Precedence: --seed flag, then HAMLEARN_SEED, then the config value.
    let env_seed = match std::env::var("HAMLEARN_SEED") {
        Ok(v) => Some(v.parse::<u64>().map_err(|_| {
            CliError::Config(format!("HAMLEARN_SEED must be an unsigned integer, got '{v}'"))
        })?),
        Err(_) => None,
    };
    let seed = common.seed.or(env_seed).or(config.seed).unwrap_or(0);
    let dir = common
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(Loaded { config, dir, seed })
}

fn require_model(loaded: &Loaded) -> Result<hamlearn::HamiltonianModel, CliError> {
    let section = loaded
        .config
        .model
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [model] section".into()))?;
    config::build_model(section, &loaded.dir).map_err(CliError::Config)
}

fn write_output(out: &Option<PathBuf>, bytes: &[u8]) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, bytes)
            .map_err(|e| CliError::Numerical(format!("cannot write {}: {e}", path.display()))),
        None => {
            std::io::stdout()
                .write_all(bytes)
                .map_err(|e| CliError::Numerical(e.to_string()))
        }
    }
}

#[derive(Serialize)]
struct LearnOutput {
    protocol: String,
    epsilon: f64,
    estimate: Vec<f64>,
    total_time: f64,
}

fn cmd_learn(common: &CommonArgs) -> Result<(), CliError> {
    let loaded = load(common)?;
    let model = require_model(&loaded)?;
    let learn = loaded
        .config
        .learn
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [learn] section".into()))?;
    let sql_cfg = loaded.config.sql.as_ref().map(|s| s.to_sql_config()).unwrap_or_default();
    let mut oracle = OracleHandle::new(model.clone(), loaded.seed);
    let (estimate, traces) = match learn.protocol.as_str() {
        "heisenberg" => {
            let c = learn.confidence.unwrap_or(1.0 / 24.0);
            let run = heisenberg::hhkt_learn(&mut oracle, learn.epsilon, c, &sql_cfg)
                .map_err(numerical)?;
            let mut buf = Vec::new();
            run.export_traces(&mut buf).map_err(numerical)?;
            (run.estimate, Some(buf))
        }
        "sql" => {
            let delta = learn.delta.unwrap_or(0.05);
            let out = sql::sql_learn(&mut oracle, learn.epsilon, delta, &sql_cfg)
                .map_err(numerical)?;
            (out.estimate, None)
        }
        other => return Err(CliError::Config(format!("unknown protocol '{other}'"))),
    };
    println!("terms:");
    for (p, g) in model.terms().iter().zip(&estimate) {
        println!("  {g} {p}");
    }
    println!("total_time: {}", oracle.total_time());
    if let Some(buf) = &traces {
        print!("{}", String::from_utf8_lossy(buf));
    }
    if common.out.is_some() {
        let payload = LearnOutput {
            protocol: learn.protocol.clone(),
            epsilon: learn.epsilon,
            estimate,
            total_time: oracle.total_time(),
        };
        let mut bytes = serde_json::to_vec_pretty(&payload).map_err(numerical)?;
        bytes.push(b'\n');
        write_output(&common.out, &bytes)?;
    }
    Ok(())
}

fn parse_state(spec: &str, n: usize) -> Result<StatePrep, CliError> {
    match spec {
        "ghz" => Ok(StatePrep::GhzZ),
        "zero" => Ok(StatePrep::ProductStabilizer(
            StabilizerProductState::all_plus_z(n).map_err(numerical)?,
        )),
        "plus" => Ok(StatePrep::ProductStabilizer(
            StabilizerProductState::new(vec![(1, Axis::X); n]).map_err(numerical)?,
        )),
        other => {
            let body = other.strip_prefix("stabilizers:").ok_or_else(|| {
                CliError::Config(format!(
                    "unknown state '{other}' (expected ghz, zero, plus, or stabilizers:+Z,-X,...)"
                ))
            })?;
            let mut stabs = Vec::new();
            for tok in body.split(',') {
                let tok = tok.trim();
                let (sign, axis) = match tok.split_at(1) {
                    ("+", rest) => (1i8, rest),
                    ("-", rest) => (-1i8, rest),
                    _ => (1i8, tok),
                };
                let axis = match axis {
                    "X" => Axis::X,
                    "Y" => Axis::Y,
                    "Z" => Axis::Z,
                    _ => return Err(CliError::Config(format!("bad stabilizer '{tok}'"))),
                };
                stabs.push((sign, axis));
            }
            if stabs.len() != n {
                return Err(CliError::Config(format!(
                    "state lists {} stabilizers for {n} qubits",
                    stabs.len()
                )));
            }
            Ok(StatePrep::ProductStabilizer(
                StabilizerProductState::new(stabs).map_err(numerical)?,
            ))
        }
    }
}

fn cmd_qfi(common: &CommonArgs) -> Result<(), CliError> {
    let loaded = load(common)?;
    let model = require_model(&loaded)?;
    let section = loaded
        .config
        .qfi
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [qfi] section".into()))?;
    let prep = parse_state(&section.state, model.n_qubits())?;
    let psi = prep.realize(model.n_qubits()).map_err(numerical)?;
    let a = fisher::a_operators(&model, section.t).map_err(numerical)?;
    let report = fisher::qfi_matrix(&a, &psi).map_err(numerical)?;
    let mut bytes = Vec::new();
    report.export_json(&mut bytes).map_err(numerical)?;
    bytes.push(b'\n');
    write_output(&common.out, &bytes)
}

#[derive(Serialize)]
struct NogoDirection {
    direction: Vec<f64>,
    qfi_ceiling_l1: f64,
    max_measured_qfi: f64,
}

#[derive(Serialize)]
struct NogoOutput {
    n_directions: usize,
    t_max: f64,
    directions: Vec<NogoDirection>,
}

fn cmd_nogo(common: &CommonArgs) -> Result<(), CliError> {
    let loaded = load(common)?;
    let model = require_model(&loaded)?;
    let basis = fisher::spectrum_preserving_directions(&model).map_err(numerical)?;
    let t_max = 50.0;
    let mut directions = Vec::new();
    for dir in &basis {
        let sweep = fisher::bounded_qfi_sweep(&model, dir, t_max, 100, 5, loaded.seed)
            .map_err(numerical)?;
        directions.push(NogoDirection {
            direction: sweep.direction,
            qfi_ceiling_l1: sweep.qfi_ceiling,
            max_measured_qfi: sweep.max_measured_qfi,
        });
    }
    let payload = NogoOutput {
        n_directions: basis.len(),
        t_max,
        directions,
    };
    let mut bytes = serde_json::to_vec_pretty(&payload).map_err(numerical)?;
    bytes.push(b'\n');
    write_output(&common.out, &bytes)
}

fn cmd_eth(common: &CommonArgs) -> Result<(), CliError> {
    let loaded = load(common)?;
    let model = require_model(&loaded)?;
    let cfg = loaded
        .config
        .eth
        .as_ref()
        .map(|s| s.to_eth_config())
        .unwrap_or_default();
    let report = eth::eth_report(&model, &cfg).map_err(numerical)?;
    let mut bytes = Vec::new();
    report.export_json(&mut bytes).map_err(numerical)?;
    bytes.push(b'\n');
    write_output(&common.out, &bytes)
}

fn cmd_bench(common: &CommonArgs) -> Result<(), CliError> {
    let loaded = load(common)?;
    let model = require_model(&loaded)?;
    let section = loaded
        .config
        .bench
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [bench] section".into()))?;
    let protocol = match section.protocol.as_str() {
        "heisenberg" => Protocol::Heisenberg,
        "sql" => Protocol::Sql,
        other => return Err(CliError::Config(format!("unknown protocol '{other}'"))),
    };
    let mut cfg = BenchConfig::new(model, protocol, section.epsilons.clone(), section.trials);
    cfg.master_seed = loaded.seed;
    if let Some(c) = section.confidence {
        cfg.confidence = c;
    }
    if let Some(d) = section.delta {
        cfg.delta = d;
    }
    if let Some(b) = section.budget {
        cfg.budget = b;
    }
    if let Some(s) = &loaded.config.sql {
        cfg.sql = s.to_sql_config();
    }
    let records = bench::run_scaling(&cfg).map_err(numerical)?;
    let include_wall_clock = section.wall_clock_in_output.unwrap_or(false);
    let mut bytes = Vec::new();
    match common.format {
        OutputFormat::Csv => bench::write_csv(&records, &mut bytes, include_wall_clock).map_err(numerical)?,
        OutputFormat::Json => bench::write_json(&records, &mut bytes, include_wall_clock).map_err(numerical)?,
    }
    write_output(&common.out, &bytes)?;
    match bench::fit_slope(&bench::log_log_points(&records)) {
        Ok((slope, stderr)) => {
            eprintln!("slope of log2 T vs log2(1/eps): {slope:.4} +- {stderr:.4}");
        }
        Err(e) => eprintln!("slope fit unavailable: {e}"),
    }
    Ok(())
}

fn cmd_convert(
    from: MetricArg,
    to: MetricArg,
    np: usize,
    eps: f64,
    delta: f64,
    time: f64,
) -> Result<(), CliError> {
    let conv = convert_cost(from.to_metric(delta), to.to_metric(delta), time, eps, np)
        .map_err(numerical)?;
    println!("eps' = {}", conv.epsilon);
    println!("T'   = {}", conv.time);
    if let Some(d) = conv.delta {
        println!("delta' = {d}");
    }
    Ok(())
}
