//! Phase-tracked Pauli-string algebra and Hamiltonian structure analysis.
//!
//! Strings are stored as symplectic bit masks with the convention `Y = iXZ`,
//! so every product is an integer computation on an exponent of `i` (mod 4)
//! and never touches floating point.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use thiserror::Error;

/// Hard cap imposed by the `u64` symplectic masks.
pub const MAX_QUBITS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PauliError {
    #[error("qubit counts differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("qubit index {index} out of range for {n} qubits")]
    QubitOutOfRange { index: usize, n: usize },
    #[error("at most {MAX_QUBITS} qubits are supported, got {0}")]
    TooManyQubits(usize),
    #[error("invalid Pauli letter '{0}'")]
    BadLetter(char),
    #[error("empty Pauli string")]
    Empty,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Pauli(#[from] PauliError),
    #[error("model has no terms")]
    NoTerms,
    #[error("term {0} is the identity, which is not allowed")]
    IdentityTerm(usize),
    #[error("duplicate term {0}")]
    DuplicateTerm(String),
    #[error("parameter u[{index}] = {value} violates |u| <= 1")]
    ParamOutOfRange { index: usize, value: f64 },
    #[error("{terms} terms but {params} parameters")]
    CountMismatch { terms: usize, params: usize },
    #[error("parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Single-qubit Pauli letter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn from_char(c: char) -> Result<Self, PauliError> {
        match c {
            'I' => Ok(Pauli::I),
            'X' => Ok(Pauli::X),
            'Y' => Ok(Pauli::Y),
            'Z' => Ok(Pauli::Z),
            _ => Err(PauliError::BadLetter(c)),
        }
    }

    pub fn to_char(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }

    fn bits(self) -> (u64, u64) {
        match self {
            Pauli::I => (0, 0),
            Pauli::X => (1, 0),
            Pauli::Y => (1, 1),
            Pauli::Z => (0, 1),
        }
    }

    fn from_bits(x: u64, z: u64) -> Self {
        match (x, z) {
            (0, 0) => Pauli::I,
            (1, 0) => Pauli::X,
            (1, 1) => Pauli::Y,
            _ => Pauli::Z,
        }
    }
}

/// Power of `i`, kept as an exponent mod 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Phase(u8);

impl Phase {
    pub const ONE: Phase = Phase(0);

    pub fn new(exponent: i64) -> Self {
        Phase(exponent.rem_euclid(4) as u8)
    }

    pub fn exponent(self) -> u8 {
        self.0
    }

    pub fn to_complex(self) -> Complex64 {
        match self.0 {
            0 => Complex64::new(1.0, 0.0),
            1 => Complex64::new(0.0, 1.0),
            2 => Complex64::new(-1.0, 0.0),
            _ => Complex64::new(0.0, -1.0),
        }
    }

}

impl std::ops::Mul for Phase {
    type Output = Phase;

    fn mul(self, other: Phase) -> Phase {
        Phase((self.0 + other.0) % 4)
    }
}

impl std::ops::Neg for Phase {
    type Output = Phase;

    fn neg(self) -> Phase {
        Phase((self.0 + 2) % 4)
    }
}

/// A tensor product of Pauli letters, one per qubit.
///
/// The value is the bare string: any phase picked up by algebra is reported
/// separately (see [`pauli_mul`]). Immutable after construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PauliString {
    x: u64,
    z: u64,
    n: usize,
}

impl PauliString {
    pub fn identity(n: usize) -> Result<Self, PauliError> {
        if n == 0 {
            return Err(PauliError::Empty);
        }
        if n > MAX_QUBITS {
            return Err(PauliError::TooManyQubits(n));
        }
        Ok(PauliString { x: 0, z: 0, n })
    }

    pub fn from_letters(letters: &[Pauli]) -> Result<Self, PauliError> {
        let mut p = Self::identity(letters.len())?;
        for (q, &l) in letters.iter().enumerate() {
            p.set_letter(q, l);
        }
        Ok(p)
    }

    /// Single-letter string: `letter` on qubit `q`, identity elsewhere.
    pub fn single(n: usize, q: usize, letter: Pauli) -> Result<Self, PauliError> {
        let mut p = Self::identity(n)?;
        if q >= n {
            return Err(PauliError::QubitOutOfRange { index: q, n });
        }
        p.set_letter(q, letter);
        Ok(p)
    }

    fn set_letter(&mut self, q: usize, letter: Pauli) {
        let (xb, zb) = letter.bits();
        self.x = (self.x & !(1 << q)) | (xb << q);
        self.z = (self.z & !(1 << q)) | (zb << q);
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    pub fn letter(&self, q: usize) -> Pauli {
        Pauli::from_bits((self.x >> q) & 1, (self.z >> q) & 1)
    }

    pub fn letters(&self) -> Vec<Pauli> {
        (0..self.n).map(|q| self.letter(q)).collect()
    }

    /// Qubits on which the string acts non-trivially.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        let mask = self.x | self.z;
        (0..self.n).filter(move |q| (mask >> q) & 1 == 1)
    }

    pub fn support_mask(&self) -> u64 {
        self.x | self.z
    }

    pub fn weight(&self) -> usize {
        (self.x | self.z).count_ones() as usize
    }

    pub fn is_identity(&self) -> bool {
        self.x == 0 && self.z == 0
    }

    /// Number of `Y` letters; the canonical form carries a factor `i^y`.
    fn y_count(&self) -> u32 {
        (self.x & self.z).count_ones()
    }

    /// (x, z) masks of the canonical decomposition `P = i^y X^x Z^z`.
    pub fn xz_masks(&self) -> (u64, u64) {
        (self.x, self.z)
    }

    /// True iff the strings commute (even number of anticommuting letters).
    pub fn commutes_with(&self, other: &PauliString) -> bool {
        let anti = (self.x & other.z).count_ones() + (self.z & other.x).count_ones();
        anti % 2 == 0
    }

    fn check_len(&self, other: &PauliString) -> Result<(), PauliError> {
        if self.n != other.n {
            return Err(PauliError::LengthMismatch(self.n, other.n));
        }
        Ok(())
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for q in 0..self.n {
            write!(f, "{}", self.letter(q).to_char())?;
        }
        Ok(())
    }
}

impl FromStr for PauliString {
    type Err = PauliError;

    fn from_str(s: &str) -> Result<Self, PauliError> {
        let letters: Result<Vec<Pauli>, PauliError> = s.chars().map(Pauli::from_char).collect();
        Self::from_letters(&letters?)
    }
}

impl PartialOrd for PauliString {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PauliString {
    /// Lexicographic on the letter sequence with I < X < Y < Z.
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        let n = self.n.min(other.n);
        for q in 0..n {
            match self.letter(q).cmp(&other.letter(q)) {
                std::cmp::Ordering::Equal => continue,
                ord => return ord,
            }
        }
        self.n.cmp(&other.n)
    }
}

/// A Pauli string with a complex coefficient; the closed carrier for products
/// and commutators. `coeff == 0` iff the value is the zero operator.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledPauli {
    pub coeff: Complex64,
    pub string: PauliString,
}

impl ScaledPauli {
    pub fn zero(n: usize) -> Result<Self, PauliError> {
        Ok(ScaledPauli {
            coeff: Complex64::new(0.0, 0.0),
            string: PauliString::identity(n)?,
        })
    }

    pub fn is_zero(&self) -> bool {
        self.coeff == Complex64::new(0.0, 0.0)
    }
}

/// Exact product `P * Q = i^k * R`.
pub fn pauli_mul_tracked(p: &PauliString, q: &PauliString) -> Result<(Phase, PauliString), PauliError> {
    p.check_len(q)?;
    let x = p.x ^ q.x;
    let z = p.z ^ q.z;
    let r = PauliString { x, z, n: p.n };
    // i^{y_P} X Z * i^{y_Q} X Z: commuting Z^{z_P} past X^{x_Q} costs (-1)^{|z_P & x_Q|},
    // then the result is rewritten canonically, absorbing i^{y_R}.
    let k = p.y_count() as i64 + q.y_count() as i64 + 2 * (p.z & q.x).count_ones() as i64
        - r.y_count() as i64;
    Ok((Phase::new(k), r))
}

/// Product as a [`ScaledPauli`]; the coefficient is always a fourth root of unity.
pub fn pauli_mul(p: &PauliString, q: &PauliString) -> Result<ScaledPauli, PauliError> {
    let (phase, string) = pauli_mul_tracked(p, q)?;
    Ok(ScaledPauli {
        coeff: phase.to_complex(),
        string,
    })
}

/// Commutator `[P, Q] = PQ - QP`: zero when the strings commute, otherwise `2 PQ`.
pub fn commutator(p: &PauliString, q: &PauliString) -> Result<ScaledPauli, PauliError> {
    p.check_len(q)?;
    if p.commutes_with(q) {
        return ScaledPauli::zero(p.n);
    }
    let (phase, string) = pauli_mul_tracked(p, q)?;
    Ok(ScaledPauli {
        coeff: 2.0 * phase.to_complex(),
        string,
    })
}

/// Maximum dual-graph degree of a term list: the largest number of *other*
/// terms sharing support with any single term.
pub fn dual_degree_of(terms: &[PauliString]) -> usize {
    let mut best = 0;
    for (a, pa) in terms.iter().enumerate() {
        let ma = pa.support_mask();
        let deg = terms
            .iter()
            .enumerate()
            .filter(|(b, pb)| *b != a && (ma & pb.support_mask()) != 0)
            .count();
        best = best.max(deg);
    }
    best
}

/// A Pauli-decomposed Hamiltonian `H(u) = sum_a u_a P_a` with `|u_a| <= 1`,
/// no identity terms, and pairwise-distinct terms.
///
/// Terms are kept in canonical (lexicographic) order so that derived
/// structure and design construction are deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianModel {
    terms: Vec<PauliString>,
    params: Vec<f64>,
    n_qubits: usize,
    dual_degree: usize,
    degree: usize,
    max_strength: f64,
}

impl HamiltonianModel {
    pub fn new(entries: Vec<(f64, PauliString)>) -> Result<Self, ModelError> {
        if entries.is_empty() {
            return Err(ModelError::NoTerms);
        }
        let n = entries[0].1.n_qubits();
        let mut entries = entries;
        entries.sort_by_key(|e| e.1);
        let mut terms = Vec::with_capacity(entries.len());
        let mut params = Vec::with_capacity(entries.len());
        for (i, (u, p)) in entries.into_iter().enumerate() {
            if p.n_qubits() != n {
                return Err(PauliError::LengthMismatch(n, p.n_qubits()).into());
            }
            if p.is_identity() {
                return Err(ModelError::IdentityTerm(i));
            }
            if !u.is_finite() || u.abs() > 1.0 {
                return Err(ModelError::ParamOutOfRange { index: i, value: u });
            }
            if let Some(prev) = terms.last() {
                if *prev == p {
                    return Err(ModelError::DuplicateTerm(p.to_string()));
                }
            }
            terms.push(p);
            params.push(u);
        }
        let dual_degree = dual_degree_of(&terms);
        let mut degree = 0;
        for q in 0..n {
            let d = terms.iter().filter(|t| (t.support_mask() >> q) & 1 == 1).count();
            degree = degree.max(d);
        }
        let max_strength = params.iter().fold(0.0f64, |m, u| m.max(u.abs()));
        Ok(HamiltonianModel {
            terms,
            params,
            n_qubits: n,
            dual_degree,
            degree,
            max_strength,
        })
    }

    /// Same terms, new parameter vector (still subject to `|u| <= 1`).
    pub fn with_params(&self, params: Vec<f64>) -> Result<Self, ModelError> {
        if params.len() != self.terms.len() {
            return Err(ModelError::CountMismatch {
                terms: self.terms.len(),
                params: params.len(),
            });
        }
        let entries = params.into_iter().zip(self.terms.iter().copied()).collect();
        Self::new(entries)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn n_params(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[PauliString] {
        &self.terms
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Maximum degree of the dual (support-intersection) graph.
    pub fn dual_degree(&self) -> usize {
        self.dual_degree
    }

    /// Maximum number of terms acting on any single qubit.
    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Largest |u_a|.
    pub fn max_strength(&self) -> f64 {
        self.max_strength
    }

    /// Parse the text format: one `<coeff> <letters>` pair per line,
    /// `#` starts a comment line, blank lines are skipped.
    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let coeff: f64 = it
                .next()
                .ok_or_else(|| ModelError::Parse {
                    line: lineno + 1,
                    reason: "missing coefficient".into(),
                })?
                .parse()
                .map_err(|e| ModelError::Parse {
                    line: lineno + 1,
                    reason: format!("bad coefficient: {e}"),
                })?;
            let letters = it.next().ok_or_else(|| ModelError::Parse {
                line: lineno + 1,
                reason: "missing Pauli letters".into(),
            })?;
            if it.next().is_some() {
                return Err(ModelError::Parse {
                    line: lineno + 1,
                    reason: "trailing tokens".into(),
                });
            }
            let string: PauliString = letters.parse().map_err(|e| ModelError::Parse {
                line: lineno + 1,
                reason: format!("{e}"),
            })?;
            entries.push((coeff, string));
        }
        Self::new(entries)
    }

    /// Inverse of [`from_text`], in canonical term order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (u, p) in self.params.iter().zip(&self.terms) {
            out.push_str(&format!("{u} {p}\n"));
        }
        out
    }
}

/// Stabilizer axis of a product state, one per qubit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn as_pauli(self) -> Pauli {
        match self {
            Axis::X => Pauli::X,
            Axis::Y => Pauli::Y,
            Axis::Z => Pauli::Z,
        }
    }

    pub fn from_pauli(p: Pauli) -> Option<Axis> {
        match p {
            Pauli::I => None,
            Pauli::X => Some(Axis::X),
            Pauli::Y => Some(Axis::Y),
            Pauli::Z => Some(Axis::Z),
        }
    }
}

/// Product state specified by one signed single-qubit stabilizer per qubit:
/// qubit `q` is the `+1` eigenstate of `sign_q * axis_q`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StabilizerProductState {
    stabilizers: Vec<(i8, Axis)>,
}

impl StabilizerProductState {
    pub fn new(stabilizers: Vec<(i8, Axis)>) -> Result<Self, PauliError> {
        if stabilizers.is_empty() {
            return Err(PauliError::Empty);
        }
        if stabilizers.len() > MAX_QUBITS {
            return Err(PauliError::TooManyQubits(stabilizers.len()));
        }
        for (s, _) in &stabilizers {
            assert!(*s == 1 || *s == -1, "stabilizer sign must be +1 or -1");
        }
        Ok(StabilizerProductState { stabilizers })
    }

    /// The all-zeros computational state `|0...0>`.
    pub fn all_plus_z(n: usize) -> Result<Self, PauliError> {
        Self::new(vec![(1, Axis::Z); n])
    }

    pub fn n_qubits(&self) -> usize {
        self.stabilizers.len()
    }

    pub fn stabilizers(&self) -> &[(i8, Axis)] {
        &self.stabilizers
    }

    /// Exact expectation of a Pauli string on this state: the product over
    /// qubits of `sign` (letter matches the stabilizer axis), `1` (identity
    /// letter) or `0` (any other letter). Always in {-1, 0, +1}.
    pub fn expect(&self, r: &PauliString) -> Result<f64, PauliError> {
        if r.n_qubits() != self.n_qubits() {
            return Err(PauliError::LengthMismatch(r.n_qubits(), self.n_qubits()));
        }
        let mut acc = 1.0f64;
        for (q, &(sign, axis)) in self.stabilizers.iter().enumerate() {
            match r.letter(q) {
                Pauli::I => {}
                l if l == axis.as_pauli() => acc *= f64::from(sign),
                _ => return Ok(0.0),
            }
        }
        Ok(acc)
    }
}

/// Free-function form of [`StabilizerProductState::expect`].
pub fn stabilizer_expect(r: &PauliString, state: &StabilizerProductState) -> Result<f64, PauliError> {
    state.expect(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ps(s: &str) -> PauliString {
        s.parse().unwrap()
    }

    #[test]
    fn mul_single_qubit_table() {
        let cases = [
            ("X", "X", Complex64::new(1.0, 0.0), "I"),
            ("X", "Y", Complex64::new(0.0, 1.0), "Z"),
            ("Y", "X", Complex64::new(0.0, -1.0), "Z"),
            ("Y", "Z", Complex64::new(0.0, 1.0), "X"),
            ("Z", "X", Complex64::new(0.0, 1.0), "Y"),
            ("X", "Z", Complex64::new(0.0, -1.0), "Y"),
            ("Z", "Y", Complex64::new(0.0, -1.0), "X"),
        ];
        for (a, b, coeff, r) in cases {
            let got = pauli_mul(&ps(a), &ps(b)).unwrap();
            assert_eq!(got.coeff, coeff, "{a}*{b}");
            assert_eq!(got.string, ps(r), "{a}*{b}");
        }
    }

    #[test]
    fn mul_two_qubit_phase_product() {
        // XZ * ZX: per-qubit products (X*Z, Z*X) = (-iY, +iY) -> phase +1, string YY.
        let got = pauli_mul(&ps("XZ"), &ps("ZX")).unwrap();
        assert_eq!(got.coeff, Complex64::new(1.0, 0.0));
        assert_eq!(got.string, ps("YY"));
    }

    #[test]
    fn commutator_cases() {
        let c = commutator(&ps("X"), &ps("Y")).unwrap();
        assert_eq!(c.coeff, Complex64::new(0.0, 2.0));
        assert_eq!(c.string, ps("Z"));

        assert!(commutator(&ps("Z"), &ps("Z")).unwrap().is_zero());

        // [ZZ, XI] = 2 * (ZZ*XI) = 2i * YZ.
        let c = commutator(&ps("ZZ"), &ps("XI")).unwrap();
        assert_eq!(c.coeff, Complex64::new(0.0, 2.0));
        assert_eq!(c.string, ps("YZ"));
    }

    #[test]
    fn commutator_antisymmetry() {
        let pairs = [("XY", "ZI"), ("XX", "YZ"), ("ZI", "XI"), ("YY", "XZ")];
        for (a, b) in pairs {
            let ab = commutator(&ps(a), &ps(b)).unwrap();
            let ba = commutator(&ps(b), &ps(a)).unwrap();
            if ab.is_zero() {
                assert!(ba.is_zero());
            } else {
                assert_eq!(ab.string, ba.string);
                assert_eq!(ab.coeff, -ba.coeff);
            }
        }
    }

    #[test]
    fn mismatched_lengths_rejected() {
        assert!(pauli_mul(&ps("XX"), &ps("X")).is_err());
        assert!(commutator(&ps("XX"), &ps("X")).is_err());
    }

    #[test]
    fn dual_degree_examples() {
        // Single term.
        let m = HamiltonianModel::new(vec![(0.5, ps("ZZ"))]).unwrap();
        assert_eq!(m.dual_degree(), 0);

        // 4-qubit open chain {Z1Z2, Z2Z3, Z3Z4, X1..X4}: Z2Z3 meets 4 others.
        let terms = ["ZZII", "IZZI", "IIZZ", "XIII", "IXII", "IIXI", "IIIX"];
        let m = HamiltonianModel::new(terms.iter().map(|t| (0.5, ps(t))).collect()).unwrap();
        assert_eq!(m.dual_degree(), 4);

        // Disjoint single-qubit terms.
        let m = HamiltonianModel::new(vec![(0.1, ps("XII")), (0.2, ps("IXI")), (0.3, ps("IIX"))])
            .unwrap();
        assert_eq!(m.dual_degree(), 0);
    }

    #[test]
    fn dual_degree_permutation_invariant() {
        let terms = ["ZZII", "IZZI", "IIZZ", "XIII", "IXII", "IIXI", "IIIX"];
        let base = dual_degree_of(&terms.iter().map(|t| ps(t)).collect::<Vec<_>>());
        // Relabel qubits by reversal.
        let relabeled: Vec<PauliString> = terms
            .iter()
            .map(|t| {
                let mut letters = ps(t).letters();
                letters.reverse();
                PauliString::from_letters(&letters).unwrap()
            })
            .collect();
        assert_eq!(dual_degree_of(&relabeled), base);
    }

    #[test]
    fn stabilizer_expectations() {
        let zz = ps("ZZ");
        let st = StabilizerProductState::all_plus_z(2).unwrap();
        assert_eq!(st.expect(&zz).unwrap(), 1.0);

        let y = ps("Y");
        let zero = StabilizerProductState::all_plus_z(1).unwrap();
        assert_eq!(zero.expect(&y).unwrap(), 0.0);

        let st = StabilizerProductState::new(vec![(1, Axis::Z), (-1, Axis::X)]).unwrap();
        assert_eq!(st.expect(&ps("ZX")).unwrap(), -1.0);
    }

    #[test]
    fn model_validation() {
        assert!(matches!(
            HamiltonianModel::new(vec![(0.5, ps("II"))]),
            Err(ModelError::IdentityTerm(_))
        ));
        assert!(matches!(
            HamiltonianModel::new(vec![(1.5, ps("ZI"))]),
            Err(ModelError::ParamOutOfRange { .. })
        ));
        assert!(matches!(
            HamiltonianModel::new(vec![(0.5, ps("ZI")), (0.25, ps("ZI"))]),
            Err(ModelError::DuplicateTerm(_))
        ));
        assert!(matches!(HamiltonianModel::new(vec![]), Err(ModelError::NoTerms)));
    }

    #[test]
    fn model_canonical_order_and_text_roundtrip() {
        let m = HamiltonianModel::new(vec![(0.3, ps("ZZI")), (0.5, ps("XII")), (-0.25, ps("IIX"))])
            .unwrap();
        let order: Vec<String> = m.terms().iter().map(|t| t.to_string()).collect();
        assert_eq!(order, vec!["IIX", "XII", "ZZI"]);

        let text = m.to_text();
        let back = HamiltonianModel::from_text(&text).unwrap();
        assert_eq!(back, m);

        let with_comment = format!("# chain\n\n{text}");
        assert_eq!(HamiltonianModel::from_text(&with_comment).unwrap(), m);
    }

    #[test]
    fn text_format_errors() {
        assert!(HamiltonianModel::from_text("0.5").is_err());
        assert!(HamiltonianModel::from_text("x ZZ").is_err());
        assert!(HamiltonianModel::from_text("0.5 ZQ").is_err());
        assert!(HamiltonianModel::from_text("0.5 ZZ extra").is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_string(n: usize) -> impl Strategy<Value = PauliString> {
            proptest::collection::vec(0u8..4, n).prop_map(|letters| {
                let letters: Vec<Pauli> = letters
                    .into_iter()
                    .map(|b| match b {
                        0 => Pauli::I,
                        1 => Pauli::X,
                        2 => Pauli::Y,
                        _ => Pauli::Z,
                    })
                    .collect();
                PauliString::from_letters(&letters).unwrap()
            })
        }

        proptest! {
            #[test]
            fn product_phases_compose_associatively(
                (a, b, c) in (1usize..5).prop_flat_map(|n| (arb_string(n), arb_string(n), arb_string(n)))
            ) {
                let (p1, ab) = pauli_mul_tracked(&a, &b).unwrap();
                let (p2, ab_c) = pauli_mul_tracked(&ab, &c).unwrap();
                let (q1, bc) = pauli_mul_tracked(&b, &c).unwrap();
                let (q2, a_bc) = pauli_mul_tracked(&a, &bc).unwrap();
                prop_assert_eq!(ab_c, a_bc);
                prop_assert_eq!(p1 * p2, q1 * q2);
            }

            #[test]
            fn commutator_is_antisymmetric(
                (a, b) in (1usize..6).prop_flat_map(|n| (arb_string(n), arb_string(n)))
            ) {
                let ab = commutator(&a, &b).unwrap();
                let ba = commutator(&b, &a).unwrap();
                if ab.is_zero() {
                    prop_assert!(ba.is_zero());
                } else {
                    prop_assert_eq!(ab.string, ba.string);
                    prop_assert_eq!(ab.coeff, -ba.coeff);
                }
            }

            #[test]
            fn commutation_matches_symplectic_form(
                (a, b) in (1usize..6).prop_flat_map(|n| (arb_string(n), arb_string(n)))
            ) {
                // The anticommuting-letter count decides commutation.
                let anti = (0..a.n_qubits())
                    .filter(|&q| {
                        let (la, lb) = (a.letter(q), b.letter(q));
                        la != Pauli::I && lb != Pauli::I && la != lb
                    })
                    .count();
                prop_assert_eq!(a.commutes_with(&b), anti % 2 == 0);
            }
        }
    }
}
