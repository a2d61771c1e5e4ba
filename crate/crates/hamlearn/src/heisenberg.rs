//! Adaptive zoom-in learner with continuous control.
//!
//! Round `d` rescales the oracle around the running estimate with zoom
//! `2^d`, learns the rescaled unknowns to error 1/2 with failure budget
//! `delta_d = c / 8^(D-d)`, clamps wild outputs to zero, and updates
//! `u~ <- u~ + 2^-d g`. Total evolution time scales as `O(1/eps)` up to the
//! inner learner's logarithmic factors.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::oracle::{OracleError, OracleHandle};
use crate::sql::{sql_learn, SqlConfig, SqlError};

#[derive(Debug, Error)]
pub enum HeisenbergError {
    #[error(transparent)]
    Sql(#[from] SqlError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("epsilon must lie in (0, 1), got {0}")]
    BadEpsilon(f64),
    #[error("confidence must lie in (0, 1/24], got {0}")]
    BadConfidence(f64),
    #[error("warm start has length {got}, expected {expected}")]
    WarmStartLength { got: usize, expected: usize },
}

/// Round ladder: `D = ceil(log2(1/eps))` rounds with per-round failure
/// budgets `delta_d = c / 8^(D-d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub epsilon: f64,
    pub confidence: f64,
    pub d_max: usize,
    pub deltas: Vec<f64>,
}

pub fn make_schedule(epsilon: f64, confidence: f64) -> Result<Schedule, HeisenbergError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(HeisenbergError::BadEpsilon(epsilon));
    }
    if !(confidence > 0.0 && confidence <= 1.0 / 24.0) {
        return Err(HeisenbergError::BadConfidence(confidence));
    }
    let mut d_max = (1.0 / epsilon).log2().ceil() as usize;
    // Guard the float boundary: the smallest D with 2^-D <= eps.
    while 0.5f64.powi(d_max as i32) > epsilon {
        d_max += 1;
    }
    while d_max > 0 && 0.5f64.powi(d_max as i32 - 1) <= epsilon {
        d_max -= 1;
    }
    let deltas = (0..=d_max)
        .map(|d| confidence / 8.0f64.powi((d_max - d) as i32))
        .collect();
    Ok(Schedule {
        epsilon,
        confidence,
        d_max,
        deltas,
    })
}

/// Per-round instrumentation.
#[derive(Debug, Clone)]
pub struct RoundTrace {
    pub d: usize,
    pub delta_d: f64,
    /// Estimate entering the round.
    pub u_tilde_before: Vec<f64>,
    /// Inner-learner output, after clamping.
    pub g: Vec<f64>,
    pub clamped: bool,
    pub g_norm_inf: f64,
    pub ledger_before: f64,
    pub ledger_after: f64,
}

#[derive(Serialize)]
struct TraceLine {
    d: usize,
    delta_d: f64,
    ledger_before: f64,
    ledger_after: f64,
    clamped: bool,
    g_norm_inf: f64,
}

/// Complete run: final estimate plus one trace per round.
#[derive(Debug, Clone)]
pub struct HhktRun {
    pub estimate: Vec<f64>,
    pub schedule: Schedule,
    pub traces: Vec<RoundTrace>,
}

impl HhktRun {
    /// JSON-lines export, one round per line.
    pub fn export_traces<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for t in &self.traces {
            let line = TraceLine {
                d: t.d,
                delta_d: t.delta_d,
                ledger_before: t.ledger_before,
                ledger_after: t.ledger_after,
                clamped: t.clamped,
                g_norm_inf: t.g_norm_inf,
            };
            serde_json::to_writer(&mut w, &line)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Default ledger ceiling applied when the handle has none: large enough for
/// the Hoeffding-rule shot counts at small epsilon, it exists to turn
/// runaway configurations into errors rather than hangs.
pub const DEFAULT_LEDGER_BUDGET: f64 = 1e15;

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Run the adaptive learner from the zero initial guess.
pub fn hhkt_learn(
    oracle: &mut OracleHandle,
    epsilon: f64,
    confidence: f64,
    cfg: &SqlConfig,
) -> Result<HhktRun, HeisenbergError> {
    let np = crate::oracle::ExperimentOracle::terms(oracle).len();
    hhkt_learn_from(oracle, epsilon, confidence, cfg, vec![0.0; np])
}

/// As [`hhkt_learn`] with a warm-started initial estimate (must satisfy the
/// round-0 input condition `||u - u~||_inf <= 1` for the guarantees to hold).
pub fn hhkt_learn_from(
    oracle: &mut OracleHandle,
    epsilon: f64,
    confidence: f64,
    cfg: &SqlConfig,
    warm_start: Vec<f64>,
) -> Result<HhktRun, HeisenbergError> {
    let schedule = make_schedule(epsilon, confidence)?;
    let np = crate::oracle::ExperimentOracle::terms(oracle).len();
    if warm_start.len() != np {
        return Err(HeisenbergError::WarmStartLength {
            got: warm_start.len(),
            expected: np,
        });
    }
    // Apply the default ledger ceiling for unbudgeted handles, restoring the
    // caller's setting on every exit path.
    let prior_budget = oracle.budget();
    if prior_budget.is_none() {
        oracle.set_budget(Some(DEFAULT_LEDGER_BUDGET));
    }
    let result = hhkt_rounds(oracle, &schedule, cfg, warm_start);
    oracle.set_budget(prior_budget);
    result
}

fn hhkt_rounds(
    oracle: &mut OracleHandle,
    schedule: &Schedule,
    cfg: &SqlConfig,
    warm_start: Vec<f64>,
) -> Result<HhktRun, HeisenbergError> {
    let np = warm_start.len();
    let mut u_tilde = warm_start;
    let mut traces = Vec::with_capacity(schedule.d_max + 1);
    for d in 0..=schedule.d_max {
        let delta_d = schedule.deltas[d];
        let scale = 0.5f64.powi(d as i32);
        let ledger_before = crate::oracle::ExperimentOracle::total_time(oracle);
        let mut g = {
            let mut view = oracle.rescale(&u_tilde, scale)?;
            sql_learn(&mut view, 0.5, delta_d, cfg)?.estimate
        };
        let raw_norm = norm_inf(&g);
        let clamped = raw_norm >= 1.0;
        if clamped {
            g = vec![0.0; np];
        }
        let ledger_after = crate::oracle::ExperimentOracle::total_time(oracle);
        traces.push(RoundTrace {
            d,
            delta_d,
            u_tilde_before: u_tilde.clone(),
            g: g.clone(),
            clamped,
            g_norm_inf: norm_inf(&g),
            ledger_before,
            ledger_after,
        });
        for (u, gi) in u_tilde.iter_mut().zip(&g) {
            // 2^-d is dyadic, so the scaled update is exact in f64.
            *u += scale * gi;
        }
    }
    Ok(HhktRun {
        estimate: u_tilde,
        schedule: schedule.clone(),
        traces,
    })
}

/// Post-hoc fault classification against the (test-only) true parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultReport {
    /// First round whose post-update estimate missed its `2^-(d+1)` ball.
    pub first_failure: Option<usize>,
    /// Per-round success of `||u~^(d+1) - u||_inf <= 2^-(d+1)`.
    pub round_success: Vec<bool>,
    pub final_error: f64,
    /// `3 * 2^-d` at the first failure, else the all-success bound `2^-(D+1)`.
    pub bound: f64,
    pub ok: bool,
}

pub fn fault_bound_check(run: &HhktRun, u_true: &[f64]) -> FaultReport {
    let mut round_success = Vec::with_capacity(run.traces.len());
    for t in &run.traces {
        let scale = 0.5f64.powi(t.d as i32);
        let after: Vec<f64> = t
            .u_tilde_before
            .iter()
            .zip(&t.g)
            .map(|(u, g)| u + scale * g)
            .collect();
        let err = after
            .iter()
            .zip(u_true)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        round_success.push(err <= 0.5f64.powi(t.d as i32 + 1));
    }
    let first_failure = round_success.iter().position(|ok| !ok);
    let final_error = run
        .estimate
        .iter()
        .zip(u_true)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    let bound = match first_failure {
        Some(d) => 3.0 * 0.5f64.powi(d as i32),
        None => 0.5f64.powi(run.schedule.d_max as i32 + 1),
    };
    FaultReport {
        first_failure,
        round_success,
        final_error,
        bound,
        ok: final_error <= bound,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{ExperimentOracle, OracleHandle};
    use crate::pauli::{HamiltonianModel, PauliString};
    use approx::assert_relative_eq;

    fn ps(s: &str) -> PauliString {
        s.parse().unwrap()
    }

    fn model(entries: &[(f64, &str)]) -> HamiltonianModel {
        HamiltonianModel::new(entries.iter().map(|(u, t)| (*u, ps(t))).collect()).unwrap()
    }

    #[test]
    fn schedule_examples() {
        let s = make_schedule(0.01, 1.0 / 24.0).unwrap();
        assert_eq!(s.d_max, 7);

        let s = make_schedule(0.5, 1.0 / 24.0).unwrap();
        assert_eq!(s.d_max, 1);

        // c = 1/24, D = 3: delta_1 = (1/24)/64.
        let s = make_schedule(0.125, 1.0 / 24.0).unwrap();
        assert_eq!(s.d_max, 3);
        assert_relative_eq!(s.deltas[1], (1.0 / 24.0) / 64.0, epsilon = 1e-18);
        // delta_D = c, delta_d = delta_{d+1} / 8.
        assert_relative_eq!(s.deltas[3], 1.0 / 24.0, epsilon = 1e-18);
        for d in 0..3 {
            assert_relative_eq!(s.deltas[d], s.deltas[d + 1] / 8.0, epsilon = 1e-18);
        }
        // 2^-D <= eps.
        assert!(0.5f64.powi(s.d_max as i32) <= s.epsilon);

        assert!(matches!(make_schedule(0.0, 0.04), Err(HeisenbergError::BadEpsilon(_))));
        assert!(matches!(make_schedule(0.1, 0.05), Err(HeisenbergError::BadConfidence(_))));
    }

    #[test]
    fn one_qubit_zoom_in() {
        let eps = 0.5f64.powi(6);
        let mut errs = Vec::new();
        for seed in 0..20u64 {
            let h = model(&[(0.3, "Z")]);
            let mut o = OracleHandle::new(h, seed);
            let run = hhkt_learn(&mut o, eps, 1.0 / 24.0, &SqlConfig::default()).unwrap();
            errs.push((run.estimate[0] - 0.3).abs());
            let report = fault_bound_check(&run, &[0.3]);
            assert!(report.ok, "seed {seed}: {report:?}");
        }
        let rms = (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt();
        assert!(rms <= eps, "rms {rms} vs eps {eps}");
    }

    #[test]
    fn zero_hamiltonian_stays_near_zero() {
        let h = model(&[(0.0, "Z")]);
        let mut o = OracleHandle::new(h, 5);
        let eps = 0.5f64.powi(4);
        let run = hhkt_learn(&mut o, eps, 1.0 / 24.0, &SqlConfig::default()).unwrap();
        assert!(run.estimate[0].abs() <= eps);
    }

    #[test]
    fn per_round_error_halving() {
        // Conditioned on success, every round's estimate is within 2^-d.
        let h = model(&[(0.62, "Z"), (-0.34, "X")]);
        let u = h.params().to_vec();
        let mut o = OracleHandle::new(h, 9);
        let run = hhkt_learn(&mut o, 0.5f64.powi(5), 1.0 / 24.0, &SqlConfig::default()).unwrap();
        for t in &run.traces {
            let err = t
                .u_tilde_before
                .iter()
                .zip(&u)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(
                err <= 0.5f64.powi(t.d as i32),
                "round {}: entering error {err}",
                t.d
            );
        }
    }

    #[test]
    fn exact_recursion_replay() {
        let h = model(&[(0.3, "Z"), (0.7, "X")]);
        let mut o = OracleHandle::new(h, 11);
        let run = hhkt_learn(&mut o, 0.02, 1.0 / 24.0, &SqlConfig::default()).unwrap();
        // Left-fold replay from any round reproduces the final estimate bit for bit.
        for start in 0..run.traces.len() {
            let mut u = run.traces[start].u_tilde_before.clone();
            for t in &run.traces[start..] {
                let scale = 0.5f64.powi(t.d as i32);
                for (ui, gi) in u.iter_mut().zip(&t.g) {
                    *ui += scale * gi;
                }
            }
            for (a, b) in u.iter().zip(&run.estimate) {
                assert_eq!(a.to_bits(), b.to_bits(), "replay from round {start}");
            }
        }
    }

    #[test]
    fn clamp_bound_holds() {
        // ||u~_final - u~^(d)||_inf <= 2^{-d+1} regardless of subroutine behavior.
        let h = model(&[(0.95, "Z")]);
        let mut o = OracleHandle::new(h, 13);
        let run = hhkt_learn(&mut o, 0.03, 1.0 / 24.0, &SqlConfig::default()).unwrap();
        for t in &run.traces {
            let diff = t
                .u_tilde_before
                .iter()
                .zip(&run.estimate)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(diff <= 0.5f64.powi(t.d as i32 - 1) + 1e-15);
        }
    }

    #[test]
    fn round_count_and_control_settings() {
        let h = model(&[(0.3, "Z")]);
        let mut o = OracleHandle::new(h, 17);
        let eps = 0.5f64.powi(4);
        let run = hhkt_learn(&mut o, eps, 1.0 / 24.0, &SqlConfig::default()).unwrap();
        // Exactly D + 1 rounds, hence D + 1 distinct control settings.
        assert_eq!(run.traces.len(), run.schedule.d_max + 1);
        assert_eq!(run.schedule.d_max, 4);
    }

    #[test]
    fn fault_injection_respects_qfi_ceiling() {
        // Corrupt round d = 2 by forcing a clamp, then check the 3 * 2^-d bound.
        let h = model(&[(0.3, "Z")]);
        let u = h.params().to_vec();
        let mut o = OracleHandle::new(h, 19);
        let mut run = hhkt_learn(&mut o, 0.5f64.powi(5), 1.0 / 24.0, &SqlConfig::default()).unwrap();
        // Inject: zero out g at round 2 and replay the recursion from there.
        let d = 2usize;
        run.traces[d].g = vec![0.0];
        run.traces[d].clamped = true;
        run.traces[d].g_norm_inf = 0.0;
        let mut u_t = run.traces[d].u_tilde_before.clone();
        for t in run.traces[d..].iter() {
            let scale = 0.5f64.powi(t.d as i32);
            for (ui, gi) in u_t.iter_mut().zip(&t.g) {
                *ui += scale * gi;
            }
        }
        // The forward traces after d are stale; rebuild the final estimate only.
        run.estimate = u_t;
        let rep = fault_bound_check(&run, &u);
        assert!(rep.final_error <= 3.0 * 0.5f64.powi(d as i32) + 1e-12);
    }

    #[test]
    fn trace_export_schema() {
        let h = model(&[(0.3, "Z")]);
        let mut o = OracleHandle::new(h, 23);
        let run = hhkt_learn(&mut o, 0.25, 1.0 / 24.0, &SqlConfig::default()).unwrap();
        let mut out = Vec::new();
        run.export_traces(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), run.traces.len());
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            for key in ["d", "delta_d", "ledger_before", "ledger_after", "clamped", "g_norm_inf"] {
                assert!(v.get(key).is_some(), "missing {key}");
            }
        }
    }

    #[test]
    fn ledger_grows_each_round() {
        let h = model(&[(0.3, "Z")]);
        let mut o = OracleHandle::new(h, 29);
        let run = hhkt_learn(&mut o, 0.1, 1.0 / 24.0, &SqlConfig::default()).unwrap();
        for t in &run.traces {
            assert!(t.ledger_after > t.ledger_before);
        }
        assert_relative_eq!(
            run.traces.last().unwrap().ledger_after,
            o.total_time(),
            epsilon = 0.0
        );
    }
}
