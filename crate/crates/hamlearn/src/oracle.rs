//! Classical oracularization of quantum experiments: a hidden parameter
//! vector, seeded sampling under the three control models, and a monotone
//! evolution-time ledger.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::Serialize;
use thiserror::Error;

use crate::pauli::{HamiltonianModel, PauliString};
use crate::sim::{self, SimError, SpectralDecomposition, StatePrep, StateVector};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("negative evolution time {0}")]
    NegativeTime(f64),
    #[error("control vector has length {got}, expected {expected}")]
    ControlLength { got: usize, expected: usize },
    #[error("control amplitude {value} exceeds the bound c_max = {c_max}")]
    ControlBound { value: f64, c_max: f64 },
    #[error("interleaved operation {index} is not unitary (deviation {deviation:.3e})")]
    NotUnitary { index: usize, deviation: f64 },
    #[error("observable must not be the identity")]
    IdentityObservable,
    #[error("shots must be >= 1")]
    ZeroShots,
    #[error("rescaling factor {0} must be positive")]
    BadDelta(f64),
    #[error("rescaling offset contains a non-finite entry")]
    NonFiniteOffset,
    #[error("this oracle view only accepts plain-time (no-control) experiments")]
    ViewControlUnsupported,
    #[error("ledger budget {budget} would be exceeded by a charge of {charge}")]
    BudgetExceeded { budget: f64, charge: f64 },
}

/// Compensated accumulator so the ledger is reproducible sum-of-charges
/// bit for bit.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// The three experimental regimes.
#[derive(Debug, Clone)]
pub enum ControlModel {
    /// A single uninterrupted evolution for time `t`.
    NoControl { t: f64 },
    /// `V_L e^{-iH tau_L} ... V_1 e^{-iH tau_1}`; the ledger charge is
    /// the total evolution time `sum_l tau_l`.
    Discrete { segments: Vec<(f64, DMatrix<Complex64>)> },
    /// Evolution under `H(u + c)` for time `t`.
    Continuous { c: Vec<f64>, t: f64 },
}

impl ControlModel {
    pub fn duration(&self) -> f64 {
        match self {
            ControlModel::NoControl { t } => *t,
            ControlModel::Discrete { segments } => segments.iter().map(|(tau, _)| *tau).sum(),
            ControlModel::Continuous { t, .. } => *t,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ControlModel::NoControl { .. } => "no_control",
            ControlModel::Discrete { .. } => "discrete",
            ControlModel::Continuous { .. } => "continuous",
        }
    }
}

/// One prepare-evolve-measure experiment.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub prep: StatePrep,
    pub control: ControlModel,
    pub observable: PauliString,
}

impl ExperimentSpec {
    pub fn no_control(prep: StatePrep, t: f64, observable: PauliString) -> Self {
        ExperimentSpec {
            prep,
            control: ControlModel::NoControl { t },
            observable,
        }
    }
}

/// One line of the query log.
#[derive(Debug, Clone, Serialize)]
pub struct QueryRecord {
    pub control_kind: &'static str,
    pub duration_charged: f64,
    pub observable: String,
    pub outcome: i8,
    pub ledger_after: f64,
}

/// Common surface of the base oracle and its rescaled views; everything the
/// learners are allowed to touch.
pub trait ExperimentOracle {
    fn n_qubits(&self) -> usize;
    /// The known term structure. Parameters stay hidden.
    fn terms(&self) -> &[PauliString];
    /// One sampled outcome; charges the evolution duration to the ledger.
    fn query(&mut self, spec: &ExperimentSpec) -> Result<i8, OracleError>;
    /// Mean and standard error of `shots` i.i.d. outcomes; charges
    /// `shots * duration`.
    fn expectation_probe(&mut self, spec: &ExperimentSpec, shots: u64)
        -> Result<(f64, f64), OracleError>;
    /// Exact observable expectation (noiseless diagnostic mode); charges one
    /// experiment's duration.
    fn expectation_exact(&mut self, spec: &ExperimentSpec) -> Result<f64, OracleError>;
    fn total_time(&self) -> f64;
}

/// Default bound on control amplitudes. The adaptive learner's running
/// estimate can transiently push |c| slightly past 1, so the bound is 2
/// rather than the nominal 1; uses beyond 1 are counted per query.
pub const C_MAX_DEFAULT: f64 = 2.0;

fn spectral_cache_key(c: Option<&[f64]>) -> Vec<u64> {
    match c {
        None => Vec::new(),
        Some(v) => v.iter().map(|x| x.to_bits()).collect(),
    }
}

/// Hidden-parameter experiment oracle.
///
/// Owns its RNG stream and ledger; single-owner by design. Parallel trials
/// should construct independent handles with derived seeds.
pub struct OracleHandle {
    model: HamiltonianModel,
    rng: ChaCha8Rng,
    ledger: KahanSum,
    c_max: f64,
    budget: Option<f64>,
    log: Option<Vec<QueryRecord>>,
    cache: HashMap<Vec<u64>, SpectralDecomposition>,
    over_unit_control_queries: u64,
}

impl OracleHandle {
    pub fn new(model: HamiltonianModel, seed: u64) -> Self {
        OracleHandle {
            model,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ledger: KahanSum::default(),
            c_max: C_MAX_DEFAULT,
            budget: None,
            log: None,
            cache: HashMap::new(),
            over_unit_control_queries: 0,
        }
    }

    pub fn with_c_max(mut self, c_max: f64) -> Self {
        self.c_max = c_max;
        self
    }

    pub fn with_budget(mut self, budget: f64) -> Self {
        self.budget = Some(budget);
        self
    }

    pub fn budget(&self) -> Option<f64> {
        self.budget
    }

    pub fn set_budget(&mut self, budget: Option<f64>) {
        self.budget = budget;
    }

    pub fn with_logging(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn c_max(&self) -> f64 {
        self.c_max
    }

    /// Queries whose control exceeded the nominal |c| <= 1 of the model
    /// definition (still within `c_max`).
    pub fn over_unit_control_queries(&self) -> u64 {
        self.over_unit_control_queries
    }

    pub fn query_log(&self) -> Option<&[QueryRecord]> {
        self.log.as_deref()
    }

    /// JSON-lines export of the query log, one record per line.
    pub fn export_query_log<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        if let Some(log) = &self.log {
            for rec in log {
                serde_json::to_writer(&mut w, rec)?;
                writeln!(w)?;
            }
        }
        Ok(())
    }

    fn spectral(&mut self, c: Option<&[f64]>) -> Result<&SpectralDecomposition, OracleError> {
        let key = spectral_cache_key(c);
        if !self.cache.contains_key(&key) {
            let dense = sim::build_dense(&self.model, c)?;
            let sd = sim::eig(&dense)?;
            self.cache.insert(key.clone(), sd);
        }
        Ok(&self.cache[&key])
    }

    fn validate(&self, spec: &ExperimentSpec) -> Result<(), OracleError> {
        if spec.observable.is_identity() {
            return Err(OracleError::IdentityObservable);
        }
        match &spec.control {
            ControlModel::NoControl { t } => {
                if *t < 0.0 {
                    return Err(OracleError::NegativeTime(*t));
                }
            }
            ControlModel::Discrete { segments } => {
                let dim = 1usize << self.model.n_qubits();
                for (i, (tau, v)) in segments.iter().enumerate() {
                    if *tau < 0.0 {
                        return Err(OracleError::NegativeTime(*tau));
                    }
                    if v.nrows() != dim || v.ncols() != dim {
                        return Err(SimError::DimensionMismatch(v.nrows(), dim).into());
                    }
                    let dev = (v.adjoint() * v - DMatrix::identity(dim, dim))
                        .iter()
                        .fold(0.0f64, |m, z| m.max(z.norm()));
                    if dev > 1e-9 {
                        return Err(OracleError::NotUnitary { index: i, deviation: dev });
                    }
                }
            }
            ControlModel::Continuous { c, t } => {
                if *t < 0.0 {
                    return Err(OracleError::NegativeTime(*t));
                }
                if c.len() != self.model.n_params() {
                    return Err(OracleError::ControlLength {
                        got: c.len(),
                        expected: self.model.n_params(),
                    });
                }
                for &ca in c {
                    if !ca.is_finite() || ca.abs() > self.c_max {
                        return Err(OracleError::ControlBound { value: ca, c_max: self.c_max });
                    }
                }
            }
        }
        Ok(())
    }

    /// Final state of the experiment, before measurement.
    fn final_state(&mut self, spec: &ExperimentSpec) -> Result<StateVector, OracleError> {
        let n = self.model.n_qubits();
        let psi0 = spec.prep.realize(n)?;
        let psi = match &spec.control {
            ControlModel::NoControl { t } => {
                let t = *t;
                let sd = self.spectral(None)?;
                sim::evolve(&psi0, sd, t)?
            }
            ControlModel::Continuous { c, t } => {
                let (c, t) = (c.clone(), *t);
                let sd = self.spectral(Some(&c))?;
                sim::evolve(&psi0, sd, t)?
            }
            ControlModel::Discrete { segments } => {
                let segments = segments.clone();
                let mut psi = psi0;
                for (tau, v) in &segments {
                    let sd = self.spectral(None)?;
                    psi = sim::evolve(&psi, sd, *tau)?;
                    psi = StateVector::new(n, v * psi.amplitudes())?;
                }
                psi
            }
        };
        Ok(psi)
    }

    /// Probability of the `+1` outcome; deterministic helper behind the
    /// sampled surface.
    fn plus_probability(&mut self, spec: &ExperimentSpec) -> Result<f64, OracleError> {
        self.validate(spec)?;
        let psi = self.final_state(spec)?;
        Ok(sim::plus_probability(&psi, &spec.observable)?)
    }

    fn charge(&mut self, duration: f64) -> Result<(), OracleError> {
        if let Some(budget) = self.budget {
            if self.ledger.value() + duration > budget {
                return Err(OracleError::BudgetExceeded { budget, charge: duration });
            }
        }
        self.ledger.add(duration);
        Ok(())
    }

    fn note_control_magnitude(&mut self, spec: &ExperimentSpec) {
        if let ControlModel::Continuous { c, .. } = &spec.control {
            if c.iter().any(|x| x.abs() > 1.0) {
                self.over_unit_control_queries += 1;
            }
        }
    }

    fn record(&mut self, spec: &ExperimentSpec, duration: f64, outcome: i8) {
        if let Some(log) = &mut self.log {
            log.push(QueryRecord {
                control_kind: spec.control.kind(),
                duration_charged: duration,
                observable: spec.observable.to_string(),
                outcome,
                ledger_after: self.ledger.value(),
            });
        }
    }
}

impl ExperimentOracle for OracleHandle {
    fn n_qubits(&self) -> usize {
        self.model.n_qubits()
    }

    fn terms(&self) -> &[PauliString] {
        self.model.terms()
    }

    fn query(&mut self, spec: &ExperimentSpec) -> Result<i8, OracleError> {
        let p = self.plus_probability(spec)?;
        let duration = spec.control.duration();
        self.charge(duration)?;
        self.note_control_magnitude(spec);
        let r: f64 = self.rng.gen();
        let outcome = if r < p { 1 } else { -1 };
        self.record(spec, duration, outcome);
        Ok(outcome)
    }

    /// The mean of `shots` i.i.d. single-shot outcomes, drawn as one
    /// binomial sample (identical distribution, constant-time).
    fn expectation_probe(
        &mut self,
        spec: &ExperimentSpec,
        shots: u64,
    ) -> Result<(f64, f64), OracleError> {
        if shots == 0 {
            return Err(OracleError::ZeroShots);
        }
        let p = self.plus_probability(spec)?;
        let duration = spec.control.duration() * shots as f64;
        self.charge(duration)?;
        self.note_control_magnitude(spec);
        let k = Binomial::new(shots, p)
            .expect("probability is clamped into [0, 1]")
            .sample(&mut self.rng);
        let mean = (2.0 * k as f64 - shots as f64) / shots as f64;
        let p_hat = k as f64 / shots as f64;
        let stderr = 2.0 * (p_hat * (1.0 - p_hat) / shots as f64).sqrt();
        self.record(spec, duration, if mean >= 0.0 { 1 } else { -1 });
        Ok((mean, stderr))
    }

    fn expectation_exact(&mut self, spec: &ExperimentSpec) -> Result<f64, OracleError> {
        let p = self.plus_probability(spec)?;
        let duration = spec.control.duration();
        self.charge(duration)?;
        self.note_control_magnitude(spec);
        let e = 2.0 * p - 1.0;
        self.record(spec, duration, if e >= 0.0 { 1 } else { -1 });
        Ok(e)
    }

    fn total_time(&self) -> f64 {
        self.ledger.value()
    }
}

impl OracleHandle {
    /// Rescaled view around the estimate `u~` with zoom `1/delta`: a nominal
    /// no-control experiment for time `t` runs on the inner oracle with
    /// `c = -u~` for time `t/delta`, so the view's effective unknown is
    /// `(u - u~)/delta`. The precondition `||u - u~||_inf < delta` cannot be
    /// checked here (u is hidden); callers clamp on failure instead.
    pub fn rescale(
        &mut self,
        u_tilde: &[f64],
        delta: f64,
    ) -> Result<RescaledOracle<'_>, OracleError> {
        if !(delta > 0.0) {
            return Err(OracleError::BadDelta(delta));
        }
        if u_tilde.len() != self.model.n_params() {
            return Err(OracleError::ControlLength {
                got: u_tilde.len(),
                expected: self.model.n_params(),
            });
        }
        if u_tilde.iter().any(|x| !x.is_finite()) {
            return Err(OracleError::NonFiniteOffset);
        }
        for &x in u_tilde {
            if x.abs() > self.c_max {
                return Err(OracleError::ControlBound { value: -x, c_max: self.c_max });
            }
        }
        Ok(RescaledOracle {
            inner: self,
            control: u_tilde.iter().map(|x| -x).collect(),
            delta,
        })
    }
}

/// View created by [`OracleHandle::rescale`]; accepts plain-time experiments
/// only and charges `t/delta` per nominal time `t`.
pub struct RescaledOracle<'a> {
    inner: &'a mut OracleHandle,
    control: Vec<f64>,
    delta: f64,
}

impl RescaledOracle<'_> {
    pub fn delta(&self) -> f64 {
        self.delta
    }

    fn translate(&self, spec: &ExperimentSpec) -> Result<ExperimentSpec, OracleError> {
        match &spec.control {
            ControlModel::NoControl { t } => {
                if *t < 0.0 {
                    return Err(OracleError::NegativeTime(*t));
                }
                Ok(ExperimentSpec {
                    prep: spec.prep.clone(),
                    control: ControlModel::Continuous {
                        c: self.control.clone(),
                        t: *t / self.delta,
                    },
                    observable: spec.observable,
                })
            }
            _ => Err(OracleError::ViewControlUnsupported),
        }
    }
}

impl ExperimentOracle for RescaledOracle<'_> {
    fn n_qubits(&self) -> usize {
        self.inner.n_qubits()
    }

    fn terms(&self) -> &[PauliString] {
        self.inner.terms()
    }

    fn query(&mut self, spec: &ExperimentSpec) -> Result<i8, OracleError> {
        let inner_spec = self.translate(spec)?;
        self.inner.query(&inner_spec)
    }

    fn expectation_probe(
        &mut self,
        spec: &ExperimentSpec,
        shots: u64,
    ) -> Result<(f64, f64), OracleError> {
        let inner_spec = self.translate(spec)?;
        self.inner.expectation_probe(&inner_spec, shots)
    }

    fn expectation_exact(&mut self, spec: &ExperimentSpec) -> Result<f64, OracleError> {
        let inner_spec = self.translate(spec)?;
        self.inner.expectation_exact(&inner_spec)
    }

    fn total_time(&self) -> f64 {
        self.inner.total_time()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pauli::{Axis, StabilizerProductState};
    use approx::assert_relative_eq;

    fn ps(s: &str) -> PauliString {
        s.parse().unwrap()
    }

    fn model(entries: &[(f64, &str)]) -> HamiltonianModel {
        HamiltonianModel::new(entries.iter().map(|(u, t)| (*u, ps(t))).collect()).unwrap()
    }

    fn plus_state(n: usize) -> StatePrep {
        StatePrep::ProductStabilizer(StabilizerProductState::new(vec![(1, Axis::X); n]).unwrap())
    }

    #[test]
    fn query_probability_matches_precession() {
        let mut o = OracleHandle::new(model(&[(0.3, "Z")]), 1);
        let spec = ExperimentSpec::no_control(plus_state(1), 1.0, ps("X"));
        let p = o.plus_probability(&spec).unwrap();
        assert_relative_eq!(p, (1.0 + 0.6f64.cos()) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn continuous_cancellation_freezes_evolution() {
        let mut o = OracleHandle::new(model(&[(0.3, "Z")]), 2);
        let frozen = ExperimentSpec {
            prep: plus_state(1),
            control: ControlModel::Continuous { c: vec![-0.3], t: 5.0 },
            observable: ps("X"),
        };
        let p = o.plus_probability(&frozen).unwrap();
        assert_relative_eq!(p, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn discrete_echo_matches_dense_composition() {
        let h = model(&[(0.5, "Z")]);
        let t = 0.8;
        let x = crate::sim::pauli_dense(&ps("X"));
        let mut o = OracleHandle::new(h.clone(), 3);
        let spec = ExperimentSpec {
            prep: plus_state(1),
            control: ControlModel::Discrete {
                segments: vec![(t, x.clone()), (t, DMatrix::identity(2, 2))],
            },
            observable: ps("X"),
        };
        let p = o.plus_probability(&spec).unwrap();

        // Dense composition oracle: U = 1 * e^{-iHt} * X * e^{-iHt}.
        let sd = crate::sim::eig(&crate::sim::build_dense(&h, None).unwrap()).unwrap();
        let psi0 = plus_state(1).realize(1).unwrap();
        let step1 = crate::sim::evolve(&psi0, &sd, t).unwrap();
        let flipped = StateVector::new(1, &x * step1.amplitudes()).unwrap();
        let fin = crate::sim::evolve(&flipped, &sd, t).unwrap();
        let want = crate::sim::plus_probability(&fin, &ps("X")).unwrap();
        assert_relative_eq!(p, want, epsilon = 1e-12);
        // Echo: XZX = -Z unwinds the first segment; <X> returns to its t=0 value.
        assert_relative_eq!(p, 1.0, epsilon = 1e-12);

        // Ledger charged the total evolution time.
        o.query(&spec).unwrap();
        assert_relative_eq!(o.total_time(), 2.0 * t, epsilon = 1e-15);
    }

    #[test]
    fn ledger_additivity_and_probe() {
        let mut o = OracleHandle::new(model(&[(0.3, "Z")]), 4);
        assert_eq!(o.total_time(), 0.0);
        let s1 = ExperimentSpec::no_control(plus_state(1), 1.5, ps("X"));
        let s2 = ExperimentSpec::no_control(plus_state(1), 2.5, ps("X"));
        o.expectation_probe(&s1, 1).unwrap();
        o.expectation_probe(&s2, 1).unwrap();
        assert_relative_eq!(o.total_time(), 4.0, epsilon = 1e-15);

        assert!(matches!(
            o.expectation_probe(&s1, 0),
            Err(OracleError::ZeroShots)
        ));
    }

    #[test]
    fn probe_clt_band() {
        let mut o = OracleHandle::new(model(&[(0.3, "Z")]), 5);
        let spec = ExperimentSpec::no_control(plus_state(1), 1.0, ps("X"));
        let (mean, stderr) = o.expectation_probe(&spec, 100_000).unwrap();
        assert!((mean - 0.6f64.cos()).abs() <= 3.0 * stderr, "mean {mean} stderr {stderr}");
    }

    #[test]
    fn rescaled_view_charges_and_matches_direct_simulation() {
        // u = 0.3, u~ = 0.25, delta = 0.5: effective u' = 0.1; t = 1 charges 2.
        let mut o = OracleHandle::new(model(&[(0.3, "Z")]), 6);
        let mut view = o.rescale(&[0.25], 0.5).unwrap();
        let spec = ExperimentSpec::no_control(plus_state(1), 1.0, ps("X"));
        let e = view.expectation_exact(&spec).unwrap();
        assert_relative_eq!(view.total_time(), 2.0, epsilon = 1e-15);

        let direct = model(&[(0.1, "Z")]);
        let sd = crate::sim::eig(&crate::sim::build_dense(&direct, None).unwrap()).unwrap();
        let psi = crate::sim::evolve(&plus_state(1).realize(1).unwrap(), &sd, 1.0).unwrap();
        let want = crate::sim::expect_pauli(&psi, &ps("X")).unwrap();
        assert_relative_eq!(e, want, epsilon = 1e-10);
    }

    #[test]
    fn rescaled_identity_view_is_transparent() {
        let h = model(&[(0.4, "Z"), (0.2, "X")]);
        let spec = ExperimentSpec::no_control(plus_state(1), 0.7, ps("Y"));
        let mut direct = OracleHandle::new(h.clone(), 7);
        let e_direct = direct.expectation_exact(&spec).unwrap();
        let mut o = OracleHandle::new(h, 7);
        let mut view = o.rescale(&[0.0, 0.0], 1.0).unwrap();
        let e_view = view.expectation_exact(&spec).unwrap();
        assert_relative_eq!(e_direct, e_view, epsilon = 1e-14);
        assert_relative_eq!(o.total_time(), 0.7, epsilon = 1e-15);
    }

    #[test]
    fn rescaled_exact_match_freezes_dynamics() {
        // u~ must follow the model's canonical term order.
        let h = model(&[(0.37, "Z"), (-0.9, "X")]);
        let u_tilde = h.params().to_vec();
        let mut o = OracleHandle::new(h, 8);
        let mut view = o.rescale(&u_tilde, 0.25).unwrap();
        for t in [0.3, 1.0, 4.0] {
            let spec = ExperimentSpec::no_control(plus_state(1), t, ps("X"));
            let e = view.expectation_exact(&spec).unwrap();
            assert_relative_eq!(e, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn determinism_per_seed() {
        let h = model(&[(0.3, "Z"), (0.6, "X")]);
        let spec = ExperimentSpec::no_control(plus_state(1), 0.9, ps("Z"));
        let run = |seed: u64| -> Vec<i8> {
            let mut o = OracleHandle::new(h.clone(), seed);
            (0..64).map(|_| o.query(&spec).unwrap()).collect()
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }

    #[test]
    fn ledger_is_exact_sum_of_logged_charges() {
        let mut o = OracleHandle::new(model(&[(0.3, "Z")]), 9).with_logging();
        let times = [0.1, 0.37, 2.25, 0.003, 5.5];
        for &t in &times {
            let spec = ExperimentSpec::no_control(plus_state(1), t, ps("X"));
            o.query(&spec).unwrap();
        }
        let mut acc = KahanSum::default();
        for rec in o.query_log().unwrap() {
            acc.add(rec.duration_charged);
        }
        assert_eq!(acc.value().to_bits(), o.total_time().to_bits());
        // Non-decreasing ledger_after.
        let log = o.query_log().unwrap();
        for w in log.windows(2) {
            assert!(w[1].ledger_after >= w[0].ledger_after);
        }
    }

    #[test]
    fn query_log_hides_parameters() {
        let hidden = [0.31415926535897931, -0.77459666924148338];
        let h = model(&[(hidden[0], "Z"), (hidden[1], "X")]);
        let mut o = OracleHandle::new(h, 10).with_logging();
        let spec = ExperimentSpec::no_control(plus_state(1), 1.0, ps("Z"));
        for _ in 0..10 {
            o.query(&spec).unwrap();
        }
        let mut out = Vec::new();
        o.export_query_log(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.lines().count() == 10);
        for u in hidden {
            assert!(!text.contains(&format!("{u}")));
            assert!(!text.contains(&format!("{}", -u)));
        }
        // Schema: all five fields present on each line.
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            for key in ["control_kind", "duration_charged", "observable", "outcome", "ledger_after"] {
                assert!(v.get(key).is_some(), "missing {key}");
            }
        }
    }

    #[test]
    fn control_bounds_enforced() {
        let mut o = OracleHandle::new(model(&[(0.3, "Z")]), 11);
        let spec = ExperimentSpec {
            prep: plus_state(1),
            control: ControlModel::Continuous { c: vec![2.5], t: 1.0 },
            observable: ps("X"),
        };
        assert!(matches!(o.query(&spec), Err(OracleError::ControlBound { .. })));

        // |c| in (1, c_max] is allowed but counted.
        let spec = ExperimentSpec {
            prep: plus_state(1),
            control: ControlModel::Continuous { c: vec![1.5], t: 1.0 },
            observable: ps("X"),
        };
        o.query(&spec).unwrap();
        assert_eq!(o.over_unit_control_queries(), 1);

        assert!(matches!(o.rescale(&[3.0], 0.5), Err(OracleError::ControlBound { .. })));
        assert!(matches!(o.rescale(&[0.0], 0.0), Err(OracleError::BadDelta(_))));
    }

    #[test]
    fn budget_cap_is_enforced() {
        let mut o = OracleHandle::new(model(&[(0.3, "Z")]), 12).with_budget(1.0);
        let spec = ExperimentSpec::no_control(plus_state(1), 0.7, ps("X"));
        o.query(&spec).unwrap();
        assert!(matches!(o.query(&spec), Err(OracleError::BudgetExceeded { .. })));
        // Failed charge leaves the ledger untouched.
        assert_relative_eq!(o.total_time(), 0.7, epsilon = 1e-15);
    }

    #[test]
    fn identity_observable_rejected() {
        let mut o = OracleHandle::new(model(&[(0.3, "Z")]), 13);
        let spec = ExperimentSpec::no_control(plus_state(1), 1.0, ps("I"));
        assert!(matches!(o.query(&spec), Err(OracleError::IdentityObservable)));
    }
}
