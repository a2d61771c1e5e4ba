//! Reproducible scaling experiments: seeded parallel trials over an epsilon
//! ladder, log-log slope fits, and stable CSV/JSON records.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heisenberg::{hhkt_learn, HeisenbergError, DEFAULT_LEDGER_BUDGET};
use crate::oracle::{ExperimentOracle, OracleHandle};
use crate::pauli::{HamiltonianModel, ModelError};
use crate::sql::{sql_learn, SqlConfig, SqlError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("need at least {need} distinct abscissae, got {got}")]
    DegenerateAbscissae { need: usize, got: usize },
    #[error(transparent)]
    Sql(#[from] SqlError),
    #[error(transparent)]
    Heisenberg(#[from] HeisenbergError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Heisenberg,
    Sql,
}

/// One scaling experiment: a protocol over an epsilon ladder with seeded,
/// independent trials; the hidden parameters are drawn fresh per trial.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub model: HamiltonianModel,
    pub protocol: Protocol,
    /// Strictly decreasing targets in (0, 1).
    pub epsilons: Vec<f64>,
    pub trials: usize,
    pub master_seed: u64,
    /// Confidence parameter for the adaptive protocol.
    pub confidence: f64,
    /// Failure probability for the plain short-time protocol.
    pub delta: f64,
    pub sql: SqlConfig,
    /// Ledger cap per trial; exceeding it marks the trial failed.
    pub budget: f64,
}

impl BenchConfig {
    pub fn new(model: HamiltonianModel, protocol: Protocol, epsilons: Vec<f64>, trials: usize) -> Self {
        BenchConfig {
            model,
            protocol,
            epsilons,
            trials,
            master_seed: 0,
            confidence: 1.0 / 24.0,
            delta: 0.05,
            sql: SqlConfig::default(),
            budget: DEFAULT_LEDGER_BUDGET,
        }
    }

    fn validate(&self) -> Result<(), BenchError> {
        if self.epsilons.is_empty() {
            return Err(BenchError::BadConfig("empty epsilon list".into()));
        }
        for w in self.epsilons.windows(2) {
            if w[1] >= w[0] {
                return Err(BenchError::BadConfig("epsilons must be strictly decreasing".into()));
            }
        }
        if self.epsilons.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
            return Err(BenchError::BadConfig("epsilons must lie in (0, 1)".into()));
        }
        if self.trials == 0 {
            return Err(BenchError::BadConfig("trials must be >= 1".into()));
        }
        Ok(())
    }
}

/// One trial's outcome.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingRecord {
    pub epsilon: f64,
    pub trial: usize,
    pub seed: u64,
    pub total_time: f64,
    pub max_abs_error: f64,
    pub success: bool,
    pub wall_clock_s: f64,
}

/// SplitMix64 step.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Parallel-safe per-trial seed from (master, epsilon index, trial index).
pub fn derive_seed(master: u64, eps_index: u64, trial: u64) -> u64 {
    let mut s = master;
    let a = splitmix64(&mut s);
    let mut s2 = a ^ eps_index.wrapping_mul(0xd131_0ba6_98df_b5ac);
    let b = splitmix64(&mut s2);
    let mut s3 = b ^ trial.wrapping_mul(0x2b32_db6c_4d5a_97f1);
    splitmix64(&mut s3)
}

fn run_one(cfg: &BenchConfig, eps_index: usize, trial: usize) -> Result<ScalingRecord, BenchError> {
    let epsilon = cfg.epsilons[eps_index];
    let seed = derive_seed(cfg.master_seed, eps_index as u64, trial as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: Vec<f64> = (0..cfg.model.n_params())
        .map(|_| rng.gen_range(-1.0..=1.0))
        .collect();
    let hidden = cfg.model.with_params(u.clone())?;
    let mut oracle = OracleHandle::new(hidden, seed ^ 0x5eed).with_budget(cfg.budget);
    let start = Instant::now();
    let (estimate, budget_ok) = match cfg.protocol {
        Protocol::Heisenberg => match hhkt_learn(&mut oracle, epsilon, cfg.confidence, &cfg.sql) {
            Ok(run) => (run.estimate, true),
            Err(HeisenbergError::Sql(SqlError::Oracle(
                crate::oracle::OracleError::BudgetExceeded { .. },
            ))) => (vec![f64::NAN; u.len()], false),
            Err(e) => return Err(e.into()),
        },
        Protocol::Sql => match sql_learn(&mut oracle, epsilon, cfg.delta, &cfg.sql) {
            Ok(out) => (out.estimate, true),
            Err(SqlError::Oracle(crate::oracle::OracleError::BudgetExceeded { .. })) => {
                (vec![f64::NAN; u.len()], false)
            }
            Err(e) => return Err(e.into()),
        },
    };
    let wall_clock_s = start.elapsed().as_secs_f64();
    let max_abs_error = estimate
        .iter()
        .zip(&u)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    Ok(ScalingRecord {
        epsilon,
        trial,
        seed,
        total_time: oracle.total_time(),
        max_abs_error,
        success: budget_ok && max_abs_error.is_finite() && max_abs_error <= epsilon,
        wall_clock_s,
    })
}

/// Run every (epsilon, trial) cell. Trials are independent (derived seeds)
/// and run in parallel; records are returned in (epsilon index, trial)
/// order, so the output is independent of the thread count.
pub fn run_scaling(cfg: &BenchConfig) -> Result<Vec<ScalingRecord>, BenchError> {
    cfg.validate()?;
    let cells: Vec<(usize, usize)> = (0..cfg.epsilons.len())
        .flat_map(|e| (0..cfg.trials).map(move |t| (e, t)))
        .collect();
    let mut records: Vec<((usize, usize), ScalingRecord)> = cells
        .into_par_iter()
        .map(|(e, t)| run_one(cfg, e, t).map(|r| ((e, t), r)))
        .collect::<Result<_, _>>()?;
    records.sort_by_key(|(k, _)| *k);
    Ok(records.into_iter().map(|(_, r)| r).collect())
}

/// Ordinary least squares on (x, y) points after averaging y within each
/// distinct x; returns (slope, standard error of the slope).
pub fn fit_slope(points: &[(f64, f64)]) -> Result<(f64, f64), BenchError> {
    let mut grouped: Vec<(f64, f64, usize)> = Vec::new();
    for &(x, y) in points {
        match grouped.iter_mut().find(|(gx, _, _)| (*gx - x).abs() < 1e-12) {
            Some((_, sum, n)) => {
                *sum += y;
                *n += 1;
            }
            None => grouped.push((x, y, 1)),
        }
    }
    if grouped.len() < 3 {
        return Err(BenchError::DegenerateAbscissae { need: 3, got: grouped.len() });
    }
    let pts: Vec<(f64, f64)> = grouped
        .iter()
        .map(|(x, sum, n)| (*x, sum / *n as f64))
        .collect();
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-12 {
        return Err(BenchError::DegenerateAbscissae { need: 3, got: 1 });
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let ss_res: f64 = pts
        .iter()
        .map(|(x, y)| (y - (slope * x + intercept)).powi(2))
        .sum();
    let var = if pts.len() > 2 {
        ss_res / (pts.len() - 2) as f64 / (sxx - sx * sx / n)
    } else {
        0.0
    };
    Ok((slope, var.max(0.0).sqrt()))
}

/// `(log2(1/eps), log2 T)` pairs from scaling records.
pub fn log_log_points(records: &[ScalingRecord]) -> Vec<(f64, f64)> {
    records
        .iter()
        .filter(|r| r.total_time > 0.0)
        .map(|r| ((1.0 / r.epsilon).log2(), r.total_time.log2()))
        .collect()
}

/// Stable CSV schema: `epsilon,trial,seed,total_time,max_abs_error,success,wall_clock_s`.
///
/// Wall-clock timing is inherently non-reproducible, so by default the
/// column is written as zero to keep result files byte-identical across
/// reruns; pass `include_wall_clock` to record real timings.
pub fn write_csv<W: Write>(
    records: &[ScalingRecord],
    mut w: W,
    include_wall_clock: bool,
) -> std::io::Result<()> {
    writeln!(w, "epsilon,trial,seed,total_time,max_abs_error,success,wall_clock_s")?;
    for r in records {
        let wall = if include_wall_clock { r.wall_clock_s } else { 0.0 };
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.epsilon, r.trial, r.seed, r.total_time, r.max_abs_error, r.success, wall
        )?;
    }
    Ok(())
}

/// JSON mirror of the CSV records.
pub fn write_json<W: Write>(
    records: &[ScalingRecord],
    mut w: W,
    include_wall_clock: bool,
) -> std::io::Result<()> {
    let sanitized: Vec<ScalingRecord> = records
        .iter()
        .map(|r| ScalingRecord {
            wall_clock_s: if include_wall_clock { r.wall_clock_s } else { 0.0 },
            ..r.clone()
        })
        .collect();
    serde_json::to_writer_pretty(&mut w, &sanitized)?;
    writeln!(w)?;
    Ok(())
}
