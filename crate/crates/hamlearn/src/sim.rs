//! Dense exact simulation: Hermitian eigendecomposition, time evolution,
//! expectation values, and projective Pauli sampling.
//!
//! Basis convention: qubit 0 is the leftmost letter and the most significant
//! bit of the computational-basis index, so `matrix(P0 P1 ... )` equals
//! `kron(P0, P1, ...)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

use crate::pauli::{HamiltonianModel, PauliError, PauliString, StabilizerProductState};

/// Largest qubit count the dense backend will materialize by default.
pub const DENSE_CUTOFF_DEFAULT: usize = 14;

const NORM_TOL: f64 = 1e-10;
const HERMITICITY_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Pauli(#[from] PauliError),
    #[error("{n} qubits exceeds the dense cutoff {cutoff}")]
    CutoffExceeded { n: usize, cutoff: usize },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("matrix is not Hermitian (max asymmetry {0:.3e})")]
    NotHermitian(f64),
    #[error("state is not normalized (norm {0})")]
    NotNormalized(f64),
    #[error("shift vector has length {got}, expected {expected}")]
    ShiftLength { got: usize, expected: usize },
    #[error("eigenstate index {index} out of range for dimension {dim}")]
    EigenstateOutOfRange { index: usize, dim: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// Normalized pure state on `n` qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amps: DVector<Complex64>,
    n_qubits: usize,
}

impl StateVector {
    pub fn new(n_qubits: usize, amps: DVector<Complex64>) -> Result<Self, SimError> {
        if amps.len() != 1 << n_qubits {
            return Err(SimError::DimensionMismatch(amps.len(), 1 << n_qubits));
        }
        let norm = amps.norm();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(SimError::NotNormalized(norm));
        }
        Ok(StateVector { amps, n_qubits })
    }

    pub fn computational(n_qubits: usize, index: usize) -> Result<Self, SimError> {
        let dim = 1usize << n_qubits;
        if index >= dim {
            return Err(SimError::EigenstateOutOfRange { index, dim });
        }
        let mut amps = DVector::from_element(dim, Complex64::new(0.0, 0.0));
        amps[index] = Complex64::new(1.0, 0.0);
        Ok(StateVector { amps, n_qubits })
    }

    /// `(|0...0> + |1...1>)/sqrt(2)`.
    pub fn ghz(n_qubits: usize) -> Result<Self, SimError> {
        let dim = 1usize << n_qubits;
        let mut amps = DVector::from_element(dim, Complex64::new(0.0, 0.0));
        let w = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        amps[0] = w;
        amps[dim - 1] = w;
        Ok(StateVector { amps, n_qubits })
    }

    /// Product vector of a signed single-qubit stabilizer description.
    pub fn from_stabilizer_product(s: &StabilizerProductState) -> Result<Self, SimError> {
        use crate::pauli::Axis;
        let n = s.n_qubits();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut amps = DVector::from_element(1, Complex64::new(1.0, 0.0));
        for &(sign, axis) in s.stabilizers() {
            let (a0, a1) = match (axis, sign) {
                (Axis::Z, 1) => (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)),
                (Axis::Z, _) => (Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)),
                (Axis::X, 1) => (Complex64::new(h, 0.0), Complex64::new(h, 0.0)),
                (Axis::X, _) => (Complex64::new(h, 0.0), Complex64::new(-h, 0.0)),
                (Axis::Y, 1) => (Complex64::new(h, 0.0), Complex64::new(0.0, h)),
                (Axis::Y, _) => (Complex64::new(h, 0.0), Complex64::new(0.0, -h)),
            };
            let mut next = DVector::from_element(amps.len() * 2, Complex64::new(0.0, 0.0));
            for (i, v) in amps.iter().enumerate() {
                next[2 * i] = v * a0;
                next[2 * i + 1] = v * a1;
            }
            amps = next;
        }
        StateVector::new(n, amps)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &DVector<Complex64> {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.norm()
    }
}

/// Apply a Pauli string to a raw amplitude vector (basis convention above).
pub fn apply_pauli(p: &PauliString, amps: &DVector<Complex64>) -> Result<DVector<Complex64>, SimError> {
    let n = p.n_qubits();
    let dim = 1usize << n;
    if amps.len() != dim {
        return Err(SimError::DimensionMismatch(amps.len(), dim));
    }
    // Translate qubit-indexed masks into basis-index masks (qubit 0 = MSB).
    let (px, pz) = p.xz_masks();
    let mut xm: u64 = 0;
    let mut zm: u64 = 0;
    for q in 0..n {
        let bit = 1u64 << (n - 1 - q);
        if (px >> q) & 1 == 1 {
            xm |= bit;
        }
        if (pz >> q) & 1 == 1 {
            zm |= bit;
        }
    }
    let y = (px & pz).count_ones();
    let iy = match y % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    };
    let mut out = DVector::from_element(dim, Complex64::new(0.0, 0.0));
    for b in 0..dim as u64 {
        let sign = if ((zm & b).count_ones()) % 2 == 0 { 1.0 } else { -1.0 };
        out[(b ^ xm) as usize] = iy * sign * amps[b as usize];
    }
    Ok(out)
}

/// Dense matrix of a Pauli string.
pub fn pauli_dense(p: &PauliString) -> DMatrix<Complex64> {
    let dim = 1usize << p.n_qubits();
    let mut m = DMatrix::from_element(dim, dim, Complex64::new(0.0, 0.0));
    for col in 0..dim {
        let mut e = DVector::from_element(dim, Complex64::new(0.0, 0.0));
        e[col] = Complex64::new(1.0, 0.0);
        let v = apply_pauli(p, &e).expect("dimensions match by construction");
        m.column_mut(col).copy_from(&v);
    }
    m
}

/// Dense Hermitian matrix of `H(u + c) = sum_a (u_a + c_a) P_a`.
pub fn build_dense(h: &HamiltonianModel, shift: Option<&[f64]>) -> Result<DMatrix<Complex64>, SimError> {
    build_dense_with_cutoff(h, shift, DENSE_CUTOFF_DEFAULT)
}

pub fn build_dense_with_cutoff(
    h: &HamiltonianModel,
    shift: Option<&[f64]>,
    cutoff: usize,
) -> Result<DMatrix<Complex64>, SimError> {
    let n = h.n_qubits();
    if n > cutoff {
        return Err(SimError::CutoffExceeded { n, cutoff });
    }
    if let Some(c) = shift {
        if c.len() != h.n_params() {
            return Err(SimError::ShiftLength {
                got: c.len(),
                expected: h.n_params(),
            });
        }
    }
    let dim = 1usize << n;
    let mut m = DMatrix::from_element(dim, dim, Complex64::new(0.0, 0.0));
    for (a, p) in h.terms().iter().enumerate() {
        let coeff = h.params()[a] + shift.map_or(0.0, |c| c[a]);
        if coeff == 0.0 {
            continue;
        }
        // One entry per column: P|b> = i^y (-1)^{<z,b>} |b ^ x>.
        let (px, pz) = p.xz_masks();
        let mut xm: u64 = 0;
        let mut zm: u64 = 0;
        for q in 0..n {
            let bit = 1u64 << (n - 1 - q);
            if (px >> q) & 1 == 1 {
                xm |= bit;
            }
            if (pz >> q) & 1 == 1 {
                zm |= bit;
            }
        }
        let iy = match (px & pz).count_ones() % 4 {
            0 => Complex64::new(1.0, 0.0),
            1 => Complex64::new(0.0, 1.0),
            2 => Complex64::new(-1.0, 0.0),
            _ => Complex64::new(0.0, -1.0),
        };
        for b in 0..dim as u64 {
            let sign = if ((zm & b).count_ones()) % 2 == 0 { 1.0 } else { -1.0 };
            m[((b ^ xm) as usize, b as usize)] += coeff * iy * sign;
        }
    }
    Ok(m)
}

/// Eigendecomposition `H = W D W^dag` with eigenvalues ascending and the
/// eigenvectors as the columns of `W`.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<Complex64>,
}

impl SpectralDecomposition {
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<Complex64> {
        &self.eigenvectors
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Spectral norm of the decomposed operator.
    pub fn spectral_norm(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0f64, |m, e| m.max(e.abs()))
    }

    pub fn reconstruct(&self) -> DMatrix<Complex64> {
        let d = DMatrix::from_diagonal(&self.eigenvalues.map(|e| Complex64::new(e, 0.0)));
        &self.eigenvectors * d * self.eigenvectors.adjoint()
    }

    /// Smallest gap between consecutive eigenvalues.
    pub fn min_gap(&self) -> f64 {
        let mut gap = f64::INFINITY;
        for i in 1..self.eigenvalues.len() {
            gap = gap.min(self.eigenvalues[i] - self.eigenvalues[i - 1]);
        }
        gap
    }
}

fn max_abs(m: &DMatrix<Complex64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.norm()))
}

/// Hermitian eigendecomposition with a fast path for real matrices.
pub fn eig(m: &DMatrix<Complex64>) -> Result<SpectralDecomposition, SimError> {
    let dim = m.nrows();
    if m.ncols() != dim {
        return Err(SimError::DimensionMismatch(m.nrows(), m.ncols()));
    }
    let asym = max_abs(&(m - m.adjoint()));
    if asym > HERMITICITY_TOL {
        return Err(SimError::NotHermitian(asym));
    }

    let all_real = m.iter().all(|v| v.im == 0.0);
    let (mut evals, mut evecs) = if all_real {
        let mr = m.map(|v| v.re);
        let sym = (&mr + mr.transpose()) * 0.5;
        let se = sym.symmetric_eigen();
        (se.eigenvalues, se.eigenvectors.map(|v| Complex64::new(v, 0.0)))
    } else {
        let herm = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
        let se = herm.symmetric_eigen();
        (se.eigenvalues, se.eigenvectors)
    };

    // Ascending order, applied to the eigenvector columns as well.
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| evals[a].partial_cmp(&evals[b]).unwrap());
    let sorted_vals = DVector::from_iterator(dim, order.iter().map(|&i| evals[i]));
    let mut sorted_vecs = DMatrix::from_element(dim, dim, Complex64::new(0.0, 0.0));
    for (dst, &src) in order.iter().enumerate() {
        sorted_vecs.column_mut(dst).copy_from(&evecs.column(src));
    }
    evals = sorted_vals;
    evecs = sorted_vecs;

    let sd = SpectralDecomposition {
        eigenvalues: evals,
        eigenvectors: evecs,
    };

    let unit_err = max_abs(&(sd.eigenvectors.adjoint() * &sd.eigenvectors - DMatrix::identity(dim, dim)));
    if unit_err > 1e-10 {
        return Err(SimError::Numerical(format!(
            "eigenvector basis not unitary (error {unit_err:.3e})"
        )));
    }
    let scale = sd.spectral_norm().max(1.0);
    let recon_err = max_abs(&(sd.reconstruct() - m));
    if recon_err > 1e-9 * scale {
        return Err(SimError::Numerical(format!(
            "eigendecomposition residual {recon_err:.3e} exceeds 1e-9 * {scale:.3e}"
        )));
    }
    Ok(sd)
}

/// Spectral norm by power iteration on `A^dag A` from two deterministic
/// starting vectors. Robust where a full eigendecomposition of a clustered
/// spectrum is not, and sufficient when only the norm is needed.
pub fn spectral_norm_power(m: &DMatrix<Complex64>) -> f64 {
    let n = m.ncols();
    if n == 0 {
        return 0.0;
    }
    let mut best = 0.0f64;
    for phase in [0.7233f64, 1.9113] {
        let mut x = DVector::from_fn(n, |i, _| {
            Complex64::new(1.0 + (i as f64 * phase).sin(), (i as f64 * phase * 1.37).cos())
        });
        let norm = x.norm();
        x /= Complex64::new(norm, 0.0);
        let mut sigma = 0.0f64;
        for _ in 0..10_000 {
            let y = m * &x;
            let estimate = y.norm();
            let z = m.ad_mul(&y);
            let zn = z.norm();
            if zn == 0.0 {
                sigma = estimate;
                break;
            }
            x = z / Complex64::new(zn, 0.0);
            if (estimate - sigma).abs() <= 1e-11 * estimate.max(1e-300) {
                sigma = estimate;
                break;
            }
            sigma = estimate;
        }
        best = best.max(sigma);
    }
    best
}

/// `W exp(-iDt) W^dag |psi>`.
pub fn evolve(psi: &StateVector, sd: &SpectralDecomposition, t: f64) -> Result<StateVector, SimError> {
    if psi.dim() != sd.dim() {
        return Err(SimError::DimensionMismatch(psi.dim(), sd.dim()));
    }
    let mut coeffs = sd.eigenvectors.ad_mul(psi.amplitudes());
    for (c, &e) in coeffs.iter_mut().zip(sd.eigenvalues.iter()) {
        *c *= Complex64::from_polar(1.0, -e * t);
    }
    let amps = &sd.eigenvectors * coeffs;
    StateVector::new(psi.n_qubits(), amps)
}

/// `<psi|P|psi>` for a Pauli string; the raw inner product is real up to 1e-10.
pub fn expect_pauli(psi: &StateVector, p: &PauliString) -> Result<f64, SimError> {
    let applied = apply_pauli(p, psi.amplitudes())?;
    let v = psi.amplitudes().dotc(&applied);
    debug_assert!(v.im.abs() <= 1e-10, "Pauli expectation not real: {v}");
    Ok(v.re)
}

/// `<psi|M|psi>` for a dense Hermitian observable.
pub fn expect_hermitian(psi: &StateVector, m: &DMatrix<Complex64>) -> Result<f64, SimError> {
    if m.nrows() != psi.dim() || m.ncols() != psi.dim() {
        return Err(SimError::DimensionMismatch(m.nrows(), psi.dim()));
    }
    let asym = max_abs(&(m - m.adjoint()));
    if asym > HERMITICITY_TOL {
        return Err(SimError::NotHermitian(asym));
    }
    let v = psi.amplitudes().dotc(&(m * psi.amplitudes()));
    Ok(v.re)
}

/// One projective measurement of a (non-identity) Pauli observable:
/// `+1` with probability `(1 + <Q>)/2`. Draws exactly one value from `rng`.
pub fn sample_pauli<R: Rng>(psi: &StateVector, q: &PauliString, rng: &mut R) -> Result<i8, SimError> {
    let p_plus = plus_probability(psi, q)?;
    let r: f64 = rng.gen();
    Ok(if r < p_plus { 1 } else { -1 })
}

/// `(1 + <Q>)/2`, clamped into [0, 1] against rounding.
pub fn plus_probability(psi: &StateVector, q: &PauliString) -> Result<f64, SimError> {
    let e = expect_pauli(psi, q)?;
    Ok(((1.0 + e) / 2.0).clamp(0.0, 1.0))
}

/// State preparations understood by the oracle and the analysis drivers.
#[derive(Debug, Clone, PartialEq)]
pub enum StatePrep {
    /// Product of signed single-qubit stabilizer eigenstates.
    ProductStabilizer(StabilizerProductState),
    /// `(|0...0> + |1...1>)/sqrt(2)`.
    GhzZ,
    /// Explicit amplitudes.
    Dense(StateVector),
    /// `index`-th eigenstate (ascending) of a given, known Hamiltonian.
    Eigenstate { model: HamiltonianModel, index: usize },
}

impl StatePrep {
    pub fn realize(&self, n_qubits: usize) -> Result<StateVector, SimError> {
        let psi = match self {
            StatePrep::ProductStabilizer(s) => StateVector::from_stabilizer_product(s)?,
            StatePrep::GhzZ => StateVector::ghz(n_qubits)?,
            StatePrep::Dense(v) => v.clone(),
            StatePrep::Eigenstate { model, index } => {
                let sd = eig(&build_dense(model, None)?)?;
                if *index >= sd.dim() {
                    return Err(SimError::EigenstateOutOfRange {
                        index: *index,
                        dim: sd.dim(),
                    });
                }
                StateVector::new(model.n_qubits(), sd.eigenvectors.column(*index).into_owned())?
            }
        };
        if psi.n_qubits() != n_qubits {
            return Err(SimError::DimensionMismatch(psi.dim(), 1 << n_qubits));
        }
        Ok(psi)
    }
}
