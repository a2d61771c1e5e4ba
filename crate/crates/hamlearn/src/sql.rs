//! Standard-quantum-limited learner from short-time evolution.
//!
//! For each Hamiltonian term the design picks a product stabilizer state and
//! a single-qubit observable whose short-time slope isolates that term:
//! `f_s'(0) = i<[H, Q_s]> = sum_b u_b * i<[P_b, Q_s]> = (M u)_s`. Slopes are
//! extracted from a polynomial fit over a Chebyshev grid on `(0, t_c]` and
//! the linear system is solved by least squares. Per-term median-of-means
//! over independent repetitions boosts the confidence, giving the contract:
//! `||g - u||_inf <= eps` with probability `>= 1 - delta` at total evolution
//! time `O(eps^-2 log(Np/delta))`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::estimators::median_of_means;
use crate::oracle::{ExperimentOracle, ExperimentSpec, OracleError};
use crate::pauli::{
    commutator, dual_degree_of, Axis, Pauli, PauliError, PauliString, StabilizerProductState,
};
use crate::sim::StatePrep;

#[derive(Debug, Error)]
pub enum SqlError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Pauli(#[from] PauliError),
    #[error("design matrix is rank-deficient or ill-conditioned (condition {0:.3e})")]
    IllConditionedDesign(f64),
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("epsilon must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("delta must lie in (0, 1), got {0}")]
    BadDelta(f64),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// One design row: prepare `prep`, evolve briefly, measure `observable`.
/// The row's analytic slope has magnitude 2 on its `target` term.
#[derive(Debug, Clone)]
pub struct DesignRow {
    pub prep: StabilizerProductState,
    pub observable: PauliString,
    pub target: usize,
}

/// Tuning for the short-time learner.
#[derive(Debug, Clone)]
pub struct SqlConfig {
    /// Short-time horizon; `None` selects `0.2 / max(1, dual_degree)`.
    pub t_c: Option<f64>,
    /// Degree of the slope-extraction fit.
    pub d_fit: usize,
    /// Chebyshev grid size on `(0, t_c]`; `None` selects `d_fit + 1`.
    pub n_nodes: Option<usize>,
    /// Median-of-means repetition constant (`ceil(k * ln(2 Np / delta))` reps).
    pub mom_constant: f64,
    /// Replace sampling by exact expectations (bias diagnostics).
    pub noiseless: bool,
    /// Largest acceptable design condition number.
    pub max_condition: f64,
}

impl Default for SqlConfig {
    fn default() -> Self {
        SqlConfig {
            t_c: None,
            d_fit: 4,
            n_nodes: None,
            mom_constant: 8.0,
            noiseless: false,
            max_condition: 1e6,
        }
    }
}

impl SqlConfig {
    fn validate(&self) -> Result<(), SqlError> {
        if let Some(tc) = self.t_c {
            if !(tc > 0.0) {
                return Err(SqlError::BadConfig(format!("t_c = {tc} must be positive")));
            }
        }
        if self.d_fit < 1 {
            return Err(SqlError::BadConfig("d_fit must be >= 1".into()));
        }
        if let Some(m) = self.n_nodes {
            if m < self.d_fit + 1 {
                return Err(SqlError::BadConfig(format!(
                    "grid size {m} must be >= d_fit + 1 = {}",
                    self.d_fit + 1
                )));
            }
        }
        if !(self.mom_constant > 0.0) {
            return Err(SqlError::BadConfig("mom_constant must be positive".into()));
        }
        Ok(())
    }

    pub fn resolve_t_c(&self, terms: &[PauliString]) -> f64 {
        self.t_c
            .unwrap_or_else(|| 0.2 / (dual_degree_of(terms).max(1) as f64))
    }

    pub fn resolve_n_nodes(&self) -> usize {
        self.n_nodes.unwrap_or(self.d_fit + 1)
    }
}

/// Cyclic successor axis X -> Y -> Z -> X; the deterministic anticommuting
/// observable choice.
fn successor_axis(p: Pauli) -> Pauli {
    match p {
        Pauli::X => Pauli::Y,
        Pauli::Y => Pauli::Z,
        Pauli::Z => Pauli::X,
        Pauli::I => unreachable!("identity letter has no successor"),
    }
}

/// Design plus its exactly computed slope matrix.
#[derive(Debug, Clone)]
pub struct Design {
    pub rows: Vec<DesignRow>,
    pub matrix: DMatrix<f64>,
    pinv: DMatrix<f64>,
    pinv_inf_norm: f64,
    condition: f64,
}

impl Design {
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Max absolute row sum of the pseudo-inverse: the factor relating
    /// per-row slope error to `||g - u||_inf`.
    pub fn pinv_inf_norm(&self) -> f64 {
        self.pinv_inf_norm
    }

    pub fn solve(&self, slopes: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(slopes);
        (&self.pinv * v).iter().copied().collect()
    }
}

/// Exact design entry `M_{s,b} = i <[P_b, Q_s]>_{rho_s}`.
fn design_entry(
    term: &PauliString,
    observable: &PauliString,
    prep: &StabilizerProductState,
) -> Result<f64, SqlError> {
    let c = commutator(term, observable)?;
    if c.is_zero() {
        return Ok(0.0);
    }
    let value = num_complex::Complex64::new(0.0, 1.0) * c.coeff * prep.expect(&c.string)?;
    debug_assert!(value.im.abs() < 1e-14, "design entry must be real");
    Ok(value.re)
}

fn row_for_term(terms: &[PauliString], a: usize) -> Result<DesignRow, SqlError> {
    let term = &terms[a];
    let n = term.n_qubits();
    let q = term
        .support()
        .next()
        .expect("model terms are never the identity");
    let target_letter = term.letter(q);
    let obs_letter = successor_axis(target_letter);
    let observable = PauliString::single(n, q, obs_letter)?;

    // i [P_a, Q_a] / 2 is a +/-1-signed Pauli string supported on Supp(P_a);
    // put the sign on qubit q so every single-qubit factor has a +1 eigenstate.
    let c = commutator(term, &observable)?;
    let signed = num_complex::Complex64::new(0.0, 1.0) * c.coeff / 2.0;
    debug_assert!(signed.im.abs() < 1e-14 && signed.re.abs() > 0.5);
    let sigma = if signed.re > 0.0 { 1i8 } else { -1i8 };

    let mut stabs: Vec<(i8, Axis)> = Vec::with_capacity(n);
    for qb in 0..n {
        let letter = c.string.letter(qb);
        match Axis::from_pauli(letter) {
            Some(axis) => stabs.push((if qb == q { sigma } else { 1 }, axis)),
            None => stabs.push((1, Axis::Z)),
        }
    }
    Ok(DesignRow {
        prep: StabilizerProductState::new(stabs)?,
        observable,
        target: a,
    })
}

fn assemble(terms: &[PauliString], rows: Vec<DesignRow>, max_condition: f64) -> Result<Design, SqlError> {
    let np = terms.len();
    let matrix = DMatrix::from_fn(rows.len(), np, |s, b| {
        design_entry(&terms[b], &rows[s].observable, &rows[s].prep).expect("dimensions agree")
    });
    let svd = matrix.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let smin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if svd.singular_values.len() < np || !(condition <= max_condition) {
        return Err(SqlError::IllConditionedDesign(condition));
    }
    let pinv = svd
        .pseudo_inverse(1e-12 * smax)
        .map_err(|e| SqlError::Numerical(e.to_string()))?;
    let pinv_inf_norm = (0..pinv.nrows())
        .map(|r| pinv.row(r).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    Ok(Design {
        rows,
        matrix,
        pinv,
        pinv_inf_norm,
        condition,
    })
}

/// One deterministic row per term; errors if the resulting slope matrix is
/// rank-deficient or has condition number above `max_condition`.
pub fn build_design(terms: &[PauliString], max_condition: f64) -> Result<Design, SqlError> {
    let rows: Result<Vec<DesignRow>, SqlError> =
        (0..terms.len()).map(|a| row_for_term(terms, a)).collect();
    assemble(terms, rows?, max_condition)
}

/// As [`build_design`], appending random product-stabilizer rows when the
/// base design is ill-conditioned.
pub fn build_design_augmented<R: Rng>(
    terms: &[PauliString],
    max_condition: f64,
    rng: &mut R,
    max_extra: usize,
) -> Result<Design, SqlError> {
    match build_design(terms, max_condition) {
        Ok(d) => Ok(d),
        Err(SqlError::IllConditionedDesign(_)) => {
            let n = terms[0].n_qubits();
            let axes = [Axis::X, Axis::Y, Axis::Z];
            let mut rows: Vec<DesignRow> =
                (0..terms.len()).map(|a| row_for_term(terms, a)).collect::<Result<_, _>>()?;
            let mut last = f64::INFINITY;
            for _ in 0..max_extra {
                let q = rng.gen_range(0..n);
                let letter = axes[rng.gen_range(0..3)].as_pauli();
                let observable = PauliString::single(n, q, letter)?;
                let stabs: Vec<(i8, Axis)> = (0..n)
                    .map(|_| (if rng.gen::<bool>() { 1 } else { -1 }, axes[rng.gen_range(0..3)]))
                    .collect();
                let prep = StabilizerProductState::new(stabs)?;
                // Keep the row only if it has a usable slope on some term.
                let best = (0..terms.len())
                    .map(|b| design_entry(&terms[b], &observable, &prep).unwrap_or(0.0).abs())
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                    .unwrap();
                if best.1 < 1.0 {
                    continue;
                }
                rows.push(DesignRow { prep, observable, target: best.0 });
                match assemble(terms, rows.clone(), max_condition) {
                    Ok(d) => return Ok(d),
                    Err(SqlError::IllConditionedDesign(c)) => last = c,
                    Err(e) => return Err(e),
                }
            }
            Err(SqlError::IllConditionedDesign(last))
        }
        Err(e) => Err(e),
    }
}

/// Deterministic shot schedule and fit geometry shared by every repetition.
#[derive(Debug, Clone)]
pub struct SqlPlan {
    pub t_c: f64,
    pub nodes: Vec<f64>,
    /// Derivative-at-zero weights of the constant-pinned least-squares fit.
    pub weights: Vec<f64>,
    pub weight_l1: f64,
    /// Per-row slope error budget `eps / ||M^+||_inf`.
    pub eps_slope: f64,
    /// Per-node estimation budget `eps_slope / (2 ||w||_1)`.
    pub eps_node: f64,
    pub shots_per_node: u64,
    pub k_reps: usize,
}

/// Per-repetition failure probability the median boosts away.
const DELTA_ROW_PER_REP: f64 = 0.25;

/// Chebyshev nodes of the first kind mapped onto `(0, t_c]`.
fn chebyshev_nodes(m: usize, t_c: f64) -> Vec<f64> {
    (1..=m)
        .map(|k| {
            let x = ((2 * k - 1) as f64 * std::f64::consts::PI / (2 * m) as f64).cos();
            t_c * (x + 1.0) / 2.0
        })
        .collect()
}

/// Weights `w` with `slope = sum_i w_i (f(t_i) - f(0))`: the degree-1
/// coefficient of the least-squares fit by `c_1 t + ... + c_d t^d`.
fn derivative_weights(nodes: &[f64], d_fit: usize) -> Result<Vec<f64>, SqlError> {
    let a = DMatrix::from_fn(nodes.len(), d_fit, |i, j| nodes[i].powi(j as i32 + 1));
    let pinv = a
        .svd(true, true)
        .pseudo_inverse(1e-13)
        .map_err(|e| SqlError::Numerical(e.to_string()))?;
    Ok(pinv.row(0).iter().copied().collect())
}

/// Build the shot plan for a target `(eps, delta)` against a given design.
pub fn plan(design: &Design, cfg: &SqlConfig, terms: &[PauliString], eps: f64, delta: f64)
    -> Result<SqlPlan, SqlError>
{
    cfg.validate()?;
    if !(eps > 0.0) {
        return Err(SqlError::BadEpsilon(eps));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(SqlError::BadDelta(delta));
    }
    let t_c = cfg.resolve_t_c(terms);
    let m = cfg.resolve_n_nodes();
    let nodes = chebyshev_nodes(m, t_c);
    let weights = derivative_weights(&nodes, cfg.d_fit)?;
    let weight_l1: f64 = weights.iter().map(|w| w.abs()).sum();
    let eps_slope = eps / design.pinv_inf_norm();
    // Half the slope budget goes to fit bias, half to shot noise.
    let eps_node = eps_slope / (2.0 * weight_l1);
    // Hoeffding for +-1 outcomes at per-node failure delta_row / (2 m).
    let delta_node = DELTA_ROW_PER_REP / (2.0 * m as f64);
    let shots_per_node = (2.0 * (2.0 / delta_node).ln() / (eps_node * eps_node)).ceil() as u64;
    let np = terms.len() as f64;
    let mut k_reps = (cfg.mom_constant * (2.0 * np / delta).ln()).ceil().max(1.0) as usize;
    if k_reps % 2 == 0 {
        k_reps += 1;
    }
    Ok(SqlPlan {
        t_c,
        nodes,
        weights,
        weight_l1,
        eps_slope,
        eps_node,
        shots_per_node: shots_per_node.max(1),
        k_reps,
    })
}

/// Estimate `f_row'(0)` from one pass over the node grid.
///
/// `delta_row` is split across nodes by the Hoeffding rule; with the default
/// plan the shots are precomputed, so this recomputes the same counts.
pub fn estimate_derivative<O: ExperimentOracle + ?Sized>(
    o: &mut O,
    row: &DesignRow,
    plan: &SqlPlan,
    noiseless: bool,
) -> Result<f64, SqlError> {
    let f0 = row.prep.expect(&row.observable)?;
    let mut slope = 0.0f64;
    for (&t, &w) in plan.nodes.iter().zip(&plan.weights) {
        let spec = ExperimentSpec::no_control(
            StatePrep::ProductStabilizer(row.prep.clone()),
            t,
            row.observable,
        );
        let value = if noiseless {
            o.expectation_exact(&spec)?
        } else {
            o.expectation_probe(&spec, plan.shots_per_node)?.0
        };
        slope += w * (value - f0);
    }
    Ok(slope)
}

/// Outcome of one learner invocation.
#[derive(Debug, Clone)]
pub struct SqlOutcome {
    pub estimate: Vec<f64>,
    pub plan: SqlPlan,
    pub ledger_delta: f64,
}

/// Learn the parameter vector to `||g - u||_inf <= eps` with probability at
/// least `1 - delta`, assuming the oracle's effective unknowns satisfy
/// `||u||_inf <= 1`.
pub fn sql_learn<O: ExperimentOracle + ?Sized>(
    o: &mut O,
    eps: f64,
    delta: f64,
    cfg: &SqlConfig,
) -> Result<SqlOutcome, SqlError> {
    let terms: Vec<PauliString> = o.terms().to_vec();
    let design = build_design(&terms, cfg.max_condition)?;
    let plan = plan(&design, cfg, &terms, eps, delta)?;
    let ledger_before = o.total_time();

    let k = if cfg.noiseless { 1 } else { plan.k_reps };
    let mut reps: Vec<Vec<f64>> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut slopes = Vec::with_capacity(design.rows.len());
        for row in &design.rows {
            slopes.push(estimate_derivative(o, row, &plan, cfg.noiseless)?);
        }
        reps.push(slopes);
    }
    let combined = median_of_means(&reps, k).map_err(|e| SqlError::Numerical(e.to_string()))?;
    let estimate = design.solve(&combined);
    Ok(SqlOutcome {
        estimate,
        plan,
        ledger_delta: o.total_time() - ledger_before,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::OracleHandle;
    use crate::pauli::HamiltonianModel;
    use crate::sim;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ps(s: &str) -> PauliString {
        s.parse().unwrap()
    }

    fn model(entries: &[(f64, &str)]) -> HamiltonianModel {
        HamiltonianModel::new(entries.iter().map(|(u, t)| (*u, ps(t))).collect()).unwrap()
    }

    /// Open 3-site chain: 2 couplings + 3 transverse fields.
    fn chain3(u: &[f64; 5]) -> HamiltonianModel {
        let terms = ["ZZI", "IZZ", "XII", "IXI", "IIX"];
        HamiltonianModel::new(
            terms.iter().zip(u).map(|(t, &c)| (c, ps(t))).collect(),
        )
        .unwrap()
    }

    #[test]
    fn design_single_z_term() {
        // Terms {Z}: observable is the cyclic successor X of Z... of Z is X.
        let terms = vec![ps("Z")];
        let d = build_design(&terms, 1e6).unwrap();
        assert_eq!(d.rows.len(), 1);
        assert_eq!(d.rows[0].observable, ps("X"));
        assert_relative_eq!(d.matrix[(0, 0)].abs(), 2.0, epsilon = 1e-14);
        assert_relative_eq!(d.matrix[(0, 0)], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn design_matches_dense_trace() {
        // M entries from the Pauli algebra equal i Tr([P_b, Q_s] rho_s).
        let terms: Vec<PauliString> = ["ZZ", "XI", "IY"].iter().map(|t| ps(t)).collect();
        let d = build_design(&terms, 1e6).unwrap();
        for (s, row) in d.rows.iter().enumerate() {
            let psi = sim::StateVector::from_stabilizer_product(&row.prep).unwrap();
            for (b, term) in terms.iter().enumerate() {
                let tb = sim::pauli_dense(term);
                let qs = sim::pauli_dense(&row.observable);
                let comm = &tb * &qs - &qs * &tb;
                let i = num_complex::Complex64::new(0.0, 1.0);
                let val = psi.amplitudes().dotc(&((comm * i) * psi.amplitudes()));
                assert_relative_eq!(d.matrix[(s, b)], val.re, epsilon = 1e-12);
                assert!(val.im.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn design_rows_hit_their_targets() {
        let h = chain3(&[0.4, -0.7, 0.2, 0.9, -0.3]);
        let d = build_design(h.terms(), 1e6).unwrap();
        for (s, row) in d.rows.iter().enumerate() {
            assert_eq!(row.target, s);
            assert!(d.matrix[(s, s)].abs() >= 1.0);
        }
        assert!(d.condition() <= 1e6);
    }

    #[test]
    fn ill_conditioned_design_is_reported() {
        // A duplicated-row matrix forced through `assemble`.
        let terms = vec![ps("Z"), ps("X")];
        let row = row_for_term(&terms, 0).unwrap();
        let rows = vec![row.clone(), row];
        assert!(matches!(
            assemble(&terms, rows, 1e6),
            Err(SqlError::IllConditionedDesign(_))
        ));
    }

    #[test]
    fn noiseless_slope_is_nearly_exact() {
        // Fitted derivative vs the analytic slope (M u)_s on a 2-qubit model.
        let h = model(&[(0.45, "ZZ"), (-0.6, "XI")]);
        let cfg = SqlConfig { noiseless: true, ..SqlConfig::default() };
        let mut o = OracleHandle::new(h.clone(), 1);
        let d = build_design(h.terms(), 1e6).unwrap();
        let p = plan(&d, &cfg, h.terms(), 0.5, 0.1).unwrap();
        for (s, row) in d.rows.iter().enumerate() {
            let got = estimate_derivative(&mut o, row, &p, true).unwrap();
            let want: f64 = (0..h.n_params()).map(|b| d.matrix[(s, b)] * h.params()[b]).sum();
            // Interpolation bias only; far below the eps_slope/2 budget.
            assert!(
                (got - want).abs() < 1e-4,
                "row {s}: got {got}, want {want}"
            );
        }
    }

    #[test]
    fn noiseless_learn_recovers_parameters() {
        let truth = [0.4, -0.7, 0.2, 0.9, -0.3];
        let h = chain3(&truth);
        let cfg = SqlConfig { noiseless: true, ..SqlConfig::default() };
        let mut o = OracleHandle::new(h.clone(), 2);
        let out = sql_learn(&mut o, 0.5, 0.05, &cfg).unwrap();
        for (g, u) in out.estimate.iter().zip(h.params()) {
            assert!((g - u).abs() < 1e-3, "estimate {g} vs truth {u}");
        }
    }

    #[test]
    fn zero_hamiltonian_gives_zero_estimate() {
        let h = model(&[(0.0, "Z")]);
        let mut o = OracleHandle::new(h, 3);
        let out = sql_learn(&mut o, 0.5, 0.1, &SqlConfig::default()).unwrap();
        assert!(out.estimate[0].abs() <= 0.5);
    }

    #[test]
    fn interface_contract_at_half_eps() {
        // The only property the adaptive learner needs: at eps = 1/2 the
        // empirical failure rate stays below delta. 500 trials split over a
        // 1-qubit and a 3-qubit model, at both delta values.
        for delta in [0.2f64, 0.05] {
            let mut failures = 0usize;
            let mut trials = 0usize;
            for seed in 0..250u64 {
                for flavor in 0..2 {
                    let (h, truth): (HamiltonianModel, Vec<f64>) = if flavor == 0 {
                        let h = model(&[(0.3, "Z")]);
                        let t = h.params().to_vec();
                        (h, t)
                    } else {
                        let h = chain3(&[0.4, -0.7, 0.2, 0.9, -0.3]);
                        let t = h.params().to_vec();
                        (h, t)
                    };
                    let mut o = OracleHandle::new(h, 10_000 + seed * 2 + flavor);
                    let out = sql_learn(&mut o, 0.5, delta, &SqlConfig::default()).unwrap();
                    let err = out
                        .estimate
                        .iter()
                        .zip(&truth)
                        .map(|(g, u)| (g - u).abs())
                        .fold(0.0f64, f64::max);
                    if err > 0.5 {
                        failures += 1;
                    }
                    trials += 1;
                }
            }
            let rate = failures as f64 / trials as f64;
            assert!(
                rate <= delta,
                "failure rate {rate} above delta = {delta} over {trials} trials"
            );
        }
    }

    #[test]
    fn ledger_delta_matches_shot_schedule() {
        let truth = [0.4, -0.7, 0.2, 0.9, -0.3];
        let h = chain3(&truth);
        let cfg = SqlConfig::default();
        let mut o = OracleHandle::new(h.clone(), 4);
        let out = sql_learn(&mut o, 0.5, 0.2, &cfg).unwrap();
        // Recompute the charge sequence: reps x rows x nodes of shots * t.
        let mut acc = crate::oracle::KahanSum::default();
        for _rep in 0..out.plan.k_reps {
            for _row in 0..h.n_params() {
                for &t in &out.plan.nodes {
                    acc.add(out.plan.shots_per_node as f64 * t);
                }
            }
        }
        assert_eq!(acc.value().to_bits(), out.ledger_delta.to_bits());
    }

    #[test]
    fn cost_scales_inverse_square_in_eps() {
        let h = chain3(&[0.4, -0.7, 0.2, 0.9, -0.3]);
        let cfg = SqlConfig::default();
        let mut costs = Vec::new();
        for eps in [0.25, 0.125, 0.0625, 0.03125] {
            let mut o = OracleHandle::new(h.clone(), 5);
            let out = sql_learn(&mut o, eps, 0.05, &cfg).unwrap();
            costs.push((eps, out.ledger_delta));
        }
        // Fit exponent of T vs 1/eps.
        let pts: Vec<(f64, f64)> = costs
            .iter()
            .map(|(e, t)| ((1.0 / e).log2(), t.log2()))
            .collect();
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!(
            (slope - 2.0).abs() <= 0.4,
            "cost exponent {slope} not within 2 +- 0.4"
        );
    }

    #[test]
    fn augmented_design_can_rescue_low_rank() {
        // Force failure by a tiny max_condition, then let random rows try;
        // mostly exercises the error path plumbing.
        let terms = vec![ps("Z"), ps("X")];
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r = build_design_augmented(&terms, 1.0 - 1e-9, &mut rng, 4);
        assert!(matches!(r, Err(SqlError::IllConditionedDesign(_))));
        let ok = build_design_augmented(&terms, 1e6, &mut rng, 4).unwrap();
        assert_eq!(ok.rows.len(), 2);
    }

    #[test]
    fn invalid_arguments_rejected() {
        let h = model(&[(0.3, "Z")]);
        let mut o = OracleHandle::new(h, 7);
        assert!(matches!(
            sql_learn(&mut o, 0.0, 0.1, &SqlConfig::default()),
            Err(SqlError::BadEpsilon(_))
        ));
        assert!(matches!(
            sql_learn(&mut o, 0.5, 1.0, &SqlConfig::default()),
            Err(SqlError::BadDelta(_))
        ));
        let bad = SqlConfig { n_nodes: Some(2), ..SqlConfig::default() };
        assert!(matches!(
            sql_learn(&mut o, 0.5, 0.1, &bad),
            Err(SqlError::BadConfig(_))
        ));
    }

    #[test]
    fn plan_weights_reproduce_polynomial_derivatives() {
        // The weights are exact on polynomials of degree <= d_fit through 0.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = SqlConfig::default();
        let nodes = chebyshev_nodes(cfg.resolve_n_nodes(), 0.2);
        let w = derivative_weights(&nodes, cfg.d_fit).unwrap();
        for _ in 0..10 {
            let coeffs: Vec<f64> = (0..cfg.d_fit).map(|_| rng.gen::<f64>() - 0.5).collect();
            let f = |t: f64| -> f64 {
                coeffs
                    .iter()
                    .enumerate()
                    .map(|(j, c)| c * t.powi(j as i32 + 1))
                    .sum()
            };
            let got: f64 = nodes.iter().zip(&w).map(|(&t, &wi)| wi * f(t)).sum();
            assert_relative_eq!(got, coeffs[0], epsilon = 1e-8, max_relative = 1e-8);
        }
    }
}
