//! Quantum Fisher information engine: time-integrated perturbation
//! operators, QFI matrices with Cramer-Rao bounds, eigen-derivative bounds,
//! and spectrum-preserving direction discovery.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::pauli::{HamiltonianModel, PauliString};
use crate::sim::{self, SimError, SpectralDecomposition, StateVector};

#[derive(Debug, Error)]
pub enum FisherError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("negative evolution time {0}")]
    NegativeTime(f64),
    #[error("direction has length {got}, expected {expected}")]
    DirectionLength { got: usize, expected: usize },
    #[error("direction is not a unit vector (norm {0})")]
    NotUnit(f64),
    #[error("spectrum too close to degenerate (relative gap {0:.3e})")]
    Degenerate(f64),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// Degenerate-frequency threshold for the time-integral kernel.
const OMEGA_TOL: f64 = 1e-12;

/// Time-integral kernel `int_0^t e^{-i w s} ds = (1 - e^{-iwt})/(iw)`,
/// with the `t` limit at small `|w|`.
fn kernel(omega: f64, t: f64) -> Complex64 {
    if omega.abs() < OMEGA_TOL {
        Complex64::new(t, 0.0)
    } else {
        (Complex64::new(1.0, 0.0) - Complex64::from_polar(1.0, -omega * t))
            / Complex64::new(0.0, omega)
    }
}

/// Time-integrated perturbation operator for one parameter direction,
/// assembled in the eigenbasis and rotated back:
/// `A_v = sum_a v_a int_0^t e^{-iHs} P_a e^{iHs} ds`.
pub fn a_operator_for_direction(
    sd: &SpectralDecomposition,
    terms: &[PauliString],
    direction: &[f64],
    t: f64,
) -> Result<DMatrix<Complex64>, FisherError> {
    if direction.len() != terms.len() {
        return Err(FisherError::DirectionLength {
            got: direction.len(),
            expected: terms.len(),
        });
    }
    if t < 0.0 {
        return Err(FisherError::NegativeTime(t));
    }
    let dim = sd.dim();
    let v = sd.eigenvectors();
    // P_v = sum_a v_a P_a applied column by column, then rotated.
    let mut pv = DMatrix::from_element(dim, dim, Complex64::new(0.0, 0.0));
    for (w, p) in direction.iter().zip(terms) {
        if *w == 0.0 {
            continue;
        }
        for col in 0..dim {
            let mut e = DVector::from_element(dim, Complex64::new(0.0, 0.0));
            e[col] = Complex64::new(1.0, 0.0);
            let pe = sim::apply_pauli(p, &e)?;
            for row in 0..dim {
                pv[(row, col)] += Complex64::new(*w, 0.0) * pe[row];
            }
        }
    }
    let tilde = v.ad_mul(&(&pv * v));
    let evals = sd.eigenvalues();
    let mut a = DMatrix::from_element(dim, dim, Complex64::new(0.0, 0.0));
    for i in 0..dim {
        for j in 0..dim {
            a[(i, j)] = tilde[(i, j)] * kernel(evals[i] - evals[j], t);
        }
    }
    Ok(v * a * v.adjoint())
}

/// The per-parameter operators `A_a` at evolution time `t`, with the source
/// decomposition they were built from.
#[derive(Debug, Clone)]
pub struct AOperators {
    pub t: f64,
    ops: Vec<DMatrix<Complex64>>,
    decomposition: SpectralDecomposition,
}

impl AOperators {
    pub fn ops(&self) -> &[DMatrix<Complex64>] {
        &self.ops
    }

    pub fn op(&self, a: usize) -> &DMatrix<Complex64> {
        &self.ops[a]
    }

    pub fn n_params(&self) -> usize {
        self.ops.len()
    }

    pub fn decomposition(&self) -> &SpectralDecomposition {
        &self.decomposition
    }
}

/// Build all `A_a` for a model at time `t`. Each is Hermitian to 1e-10 and
/// obeys the norm law `||A_a||_s <= t`.
pub fn a_operators(h: &HamiltonianModel, t: f64) -> Result<AOperators, FisherError> {
    if t < 0.0 {
        return Err(FisherError::NegativeTime(t));
    }
    let sd = sim::eig(&sim::build_dense(h, None)?)?;
    let np = h.n_params();
    let mut ops = Vec::with_capacity(np);
    for a in 0..np {
        let mut dir = vec![0.0; np];
        dir[a] = 1.0;
        let m = a_operator_for_direction(&sd, h.terms(), &dir, t)?;
        let herm_err = (&m - m.adjoint()).iter().fold(0.0f64, |acc, z| acc.max(z.norm()));
        if herm_err > 1e-10 {
            return Err(FisherError::Numerical(format!(
                "A_{a} not Hermitian (deviation {herm_err:.3e})"
            )));
        }
        ops.push(m);
    }
    Ok(AOperators {
        t,
        ops,
        decomposition: sd,
    })
}

/// Cramer-Rao lower bounds derived from a QFI matrix.
#[derive(Debug, Clone)]
pub struct CrBounds {
    /// `sqrt([I^+]_aa)` per parameter.
    pub per_param: Vec<f64>,
    /// `sqrt(trace(I^+)/Np)`.
    pub trace_bound: f64,
    /// Orthonormal directions with (numerically) zero information.
    pub null_directions: Vec<Vec<f64>>,
}

/// Pseudo-inverse bounds; singular information is reported as unlearnable
/// directions rather than an error.
pub fn cr_bounds(info: &DMatrix<f64>) -> Result<CrBounds, FisherError> {
    let np = info.nrows();
    let sym = (info + info.transpose()) * 0.5;
    let se = sym.symmetric_eigen();
    let max_ev = se.eigenvalues.iter().fold(0.0f64, |m, &e| m.max(e.abs()));
    let tol = 1e-8 * max_ev.max(f64::MIN_POSITIVE);
    let mut pinv = DMatrix::zeros(np, np);
    let mut null_directions = Vec::new();
    for k in 0..np {
        let ev = se.eigenvalues[k];
        let v = se.eigenvectors.column(k);
        if ev.abs() <= tol {
            null_directions.push(v.iter().copied().collect());
        } else {
            pinv += DMatrix::from_fn(np, np, |i, j| v[i] * v[j] / ev);
        }
    }
    let per_param = (0..np).map(|a| pinv[(a, a)].max(0.0).sqrt()).collect();
    let trace_bound = (pinv.trace().max(0.0) / np as f64).sqrt();
    Ok(CrBounds {
        per_param,
        trace_bound,
        null_directions,
    })
}

/// QFI matrix `I_ab = 4 (Re<A_a A_b> - <A_a><A_b>)` with its spectrum and
/// Cramer-Rao bounds.
#[derive(Debug, Clone)]
pub struct QfiReport {
    pub t: f64,
    pub matrix: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub per_param_bounds: Vec<f64>,
    pub trace_bound: f64,
    pub null_directions: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct QfiExport<'a> {
    t: f64,
    eigenvalues: &'a [f64],
    per_param_bounds: &'a [f64],
    trace_bound: f64,
}

impl QfiReport {
    pub fn export_json<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let e = QfiExport {
            t: self.t,
            eigenvalues: &self.eigenvalues,
            per_param_bounds: &self.per_param_bounds,
            trace_bound: self.trace_bound,
        };
        serde_json::to_writer(&mut w, &e)?;
        Ok(())
    }
}

/// QFI of a pure state under the given perturbation operators. Off-diagonal
/// entries use the symmetrized real part, which keeps the matrix real
/// symmetric and positive semidefinite.
pub fn qfi_matrix(a: &AOperators, psi: &StateVector) -> Result<QfiReport, FisherError> {
    let np = a.n_params();
    let dim = psi.dim();
    if dim != a.decomposition.dim() {
        return Err(SimError::DimensionMismatch(dim, a.decomposition.dim()).into());
    }
    // Cache A_a |psi> and <A_a>.
    let applied: Vec<DVector<Complex64>> = a.ops.iter().map(|m| m * psi.amplitudes()).collect();
    let means: Vec<f64> = applied
        .iter()
        .map(|v| psi.amplitudes().dotc(v).re)
        .collect();
    let mut info = DMatrix::zeros(np, np);
    for x in 0..np {
        for y in x..np {
            let corr = applied[x].dotc(&applied[y]).re;
            let val = 4.0 * (corr - means[x] * means[y]);
            info[(x, y)] = val;
            info[(y, x)] = val;
        }
    }
    let se = info.clone().symmetric_eigen();
    let mut eigenvalues: Vec<f64> = se.eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let bounds = cr_bounds(&info)?;
    Ok(QfiReport {
        t: a.t,
        matrix: info,
        eigenvalues,
        per_param_bounds: bounds.per_param,
        trace_bound: bounds.trace_bound,
        null_directions: bounds.null_directions,
    })
}

/// Directional derivatives of the eigendecomposition in the gauge
/// `<E_i | d E_i> = 0`.
#[derive(Debug, Clone)]
pub struct DirectionalDerivatives {
    pub direction: Vec<f64>,
    /// `(dD)_i = <E_i| dH |E_i>`, ascending-eigenvalue order.
    pub d_eigenvalues: DVector<f64>,
    /// Derivative of the eigenvector matrix (columns follow the eigenbasis).
    pub d_eigenvectors: DMatrix<Complex64>,
    pub norm_d_eigenvalues: f64,
    pub norm_d_eigenvectors: f64,
    pub norm_d_hamiltonian: f64,
}

/// First-order perturbation theory for `H(u + s v)` at `s = 0`; errors on a
/// near-degenerate spectrum rather than mis-differentiating through it.
pub fn eigen_derivatives(
    h: &HamiltonianModel,
    direction: &[f64],
) -> Result<DirectionalDerivatives, FisherError> {
    let np = h.n_params();
    if direction.len() != np {
        return Err(FisherError::DirectionLength { got: direction.len(), expected: np });
    }
    let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(FisherError::NotUnit(norm));
    }
    let sd = sim::eig(&sim::build_dense(h, None)?)?;
    let scale = sd.spectral_norm().max(f64::MIN_POSITIVE);
    let rel_gap = sd.min_gap() / scale;
    if rel_gap < 1e-9 {
        return Err(FisherError::Degenerate(rel_gap));
    }
    let dim = sd.dim();
    let v = sd.eigenvectors();
    // dH in the eigenbasis.
    let mut dh = DMatrix::from_element(dim, dim, Complex64::new(0.0, 0.0));
    for (w, p) in direction.iter().zip(h.terms()) {
        if *w == 0.0 {
            continue;
        }
        let dense = sim::pauli_dense(p);
        dh += dense * Complex64::new(*w, 0.0);
    }
    let norm_dh = sim::eig(&dh)?.spectral_norm();
    let tilde = v.ad_mul(&(&dh * v));
    let evals = sd.eigenvalues();
    let d_eigenvalues = DVector::from_iterator(dim, (0..dim).map(|i| tilde[(i, i)].re));
    let mut coupling = DMatrix::from_element(dim, dim, Complex64::new(0.0, 0.0));
    for j in 0..dim {
        for i in 0..dim {
            if i != j {
                coupling[(j, i)] = tilde[(j, i)] / Complex64::new(evals[i] - evals[j], 0.0);
            }
        }
    }
    let norm_dw = coupling
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0f64, |m, &s| m.max(s));
    let d_eigenvectors = v * coupling;
    let norm_dd = d_eigenvalues.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    Ok(DirectionalDerivatives {
        direction: direction.to_vec(),
        d_eigenvalues,
        d_eigenvectors,
        norm_d_eigenvalues: norm_dd,
        norm_d_eigenvectors: norm_dw,
        norm_d_hamiltonian: norm_dh,
    })
}

/// Information ceiling for one experiment with `L` interleaved unitaries
/// (factor-4 convention matching [`qfi_matrix`]):
/// `4 min(t ||dD|| + 2L ||dW||, t ||dH||)^2`.
pub fn qfi_ceiling(dd: &DirectionalDerivatives, t: f64, l: usize) -> f64 {
    let via_decomposition = t * dd.norm_d_eigenvalues + 2.0 * l as f64 * dd.norm_d_eigenvectors;
    let via_hamiltonian = t * dd.norm_d_hamiltonian;
    4.0 * via_decomposition.min(via_hamiltonian).powi(2)
}

/// Outcome of a bounded-information sweep along one parameter direction.
#[derive(Debug, Clone)]
pub struct DirectionSweep {
    pub direction: Vec<f64>,
    /// Largest `v^T I v` seen over the (time, state) grid.
    pub max_measured_qfi: f64,
    /// Information ceiling at `t_max` for `L = 1`; t-independent when the
    /// direction freezes the spectrum.
    pub qfi_ceiling: f64,
}

/// Max single-experiment QFI along `direction` over a uniform time grid on
/// `(0, t_max]` and seeded Haar-like random pure states, together with the
/// eigen-derivative ceiling.
pub fn bounded_qfi_sweep(
    h: &HamiltonianModel,
    direction: &[f64],
    t_max: f64,
    grid_points: usize,
    states_per_point: usize,
    seed: u64,
) -> Result<DirectionSweep, FisherError> {
    use rand::{Rng, SeedableRng};
    let dd = eigen_derivatives(h, direction)?;
    let qfi_ceiling = qfi_ceiling(&dd, t_max, 1);
    let sd = sim::eig(&sim::build_dense(h, None)?)?;
    let dim = sd.dim();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut max_measured: f64 = 0.0;
    for k in 1..=grid_points {
        let t = t_max * k as f64 / grid_points as f64;
        let a = a_operator_for_direction(&sd, h.terms(), direction, t)?;
        for _ in 0..states_per_point {
            let mut amps = DVector::from_fn(dim, |_, _| {
                Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
            });
            let norm = amps.norm();
            amps /= Complex64::new(norm, 0.0);
            let applied = &a * &amps;
            let mean = amps.dotc(&applied).re;
            let second = applied.dotc(&applied).re;
            max_measured = max_measured.max(4.0 * (second - mean * mean));
        }
    }
    Ok(DirectionSweep {
        direction: direction.to_vec(),
        max_measured_qfi: max_measured,
        qfi_ceiling,
    })
}

/// Orthonormal basis of first-order spectrum-preserving parameter
/// directions: the numerical null space of the Jacobian
/// `J_{ia} = <E_i| P_a |E_i>`. Empty when every direction moves some
/// eigenvalue.
pub fn spectrum_preserving_directions(h: &HamiltonianModel) -> Result<Vec<Vec<f64>>, FisherError> {
    let sd = sim::eig(&sim::build_dense(h, None)?)?;
    let scale = sd.spectral_norm().max(f64::MIN_POSITIVE);
    if sd.min_gap() / scale < 1e-9 {
        return Err(FisherError::Degenerate(sd.min_gap() / scale));
    }
    let dim = sd.dim();
    let np = h.n_params();
    let v = sd.eigenvectors();
    let mut jac = DMatrix::zeros(dim, np);
    for (a, p) in h.terms().iter().enumerate() {
        for i in 0..dim {
            let col = v.column(i);
            let pe = sim::apply_pauli(p, &col.into_owned())?;
            jac[(i, a)] = col.dotc(&pe).re;
        }
    }
    // Null space via the spectrum of J^T J (covers the wide case too).
    let jtj = jac.transpose() * &jac;
    let se = jtj.symmetric_eigen();
    let max_ev = se.eigenvalues.iter().fold(0.0f64, |m, &e| m.max(e.abs()));
    let sigma_max = max_ev.max(0.0).sqrt();
    let tol = 1e-8 * sigma_max.max(f64::MIN_POSITIVE);
    let mut basis = Vec::new();
    for k in 0..np {
        if se.eigenvalues[k].max(0.0).sqrt() < tol {
            basis.push(se.eigenvectors.column(k).iter().copied().collect());
        }
    }
    Ok(basis)
}
