//! Thermalization diagnostics on exactly diagonalized chains: thermal
//! expectations, connected correlators, level statistics, the
//! diagonal/off-diagonal split of time-integrated operators, and low-rank
//! structure of the diagonal part.

use std::cell::RefCell;
use std::collections::HashMap;
use std::io::Write;
use std::rc::Rc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::fisher::{self, FisherError};
use crate::pauli::{HamiltonianModel, Pauli, PauliString};
use crate::sim::{self, SimError, SpectralDecomposition, StatePrep};

#[derive(Debug, Error)]
pub enum EthError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Fisher(#[from] FisherError),
    #[error(transparent)]
    Model(#[from] crate::pauli::ModelError),
    #[error("beta = {0} exceeds the overflow-safe range")]
    BetaOutOfRange(f64),
    #[error("energy {0} is not attainable within |beta| <= {1}")]
    EnergyOutOfRange(f64, f64),
    #[error("connected correlators support up to 4 operators, got {0}")]
    TooManyOperators(usize),
    #[error("derivative order {0} exceeds 3")]
    OrderTooHigh(usize),
    #[error("window is empty")]
    EmptyWindow,
    #[error("window has {0} levels, need at least {1}")]
    TooFewLevels(usize, usize),
    #[error("invalid argument: {0}")]
    BadArgument(String),
}

/// Mixed-field Ising chain at the standard chaotic point: unit couplings,
/// transverse field 0.9045, longitudinal field 0.8090, open boundaries.
pub fn mfi_chain(length: usize) -> Result<HamiltonianModel, EthError> {
    let mut entries = Vec::new();
    for i in 0..length.saturating_sub(1) {
        let mut letters = vec![Pauli::I; length];
        letters[i] = Pauli::Z;
        letters[i + 1] = Pauli::Z;
        entries.push((1.0, PauliString::from_letters(&letters).map_err(crate::pauli::ModelError::from)?));
    }
    for i in 0..length {
        entries.push((0.9045, PauliString::single(length, i, Pauli::X).map_err(crate::pauli::ModelError::from)?));
        entries.push((0.8090, PauliString::single(length, i, Pauli::Z).map_err(crate::pauli::ModelError::from)?));
    }
    Ok(HamiltonianModel::new(entries)?)
}

/// Basis relabeling of the site-reversal symmetry `q <-> n-1-q`.
pub fn site_reversal_permutation(n_qubits: usize) -> Vec<usize> {
    let dim = 1usize << n_qubits;
    (0..dim)
        .map(|b| {
            let mut out = 0usize;
            for bit in 0..n_qubits {
                if (b >> bit) & 1 == 1 {
                    out |= 1 << (n_qubits - 1 - bit);
                }
            }
            out
        })
        .collect()
}

/// Contiguous eigenstate index window `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnergyWindow {
    pub lo: usize,
    pub hi: usize,
}

impl EnergyWindow {
    pub fn middle_third(dim: usize) -> Self {
        EnergyWindow { lo: dim / 3, hi: dim - dim / 3 }
    }

    pub fn len(&self) -> usize {
        self.hi.saturating_sub(self.lo)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn indices(&self) -> std::ops::Range<usize> {
        self.lo..self.hi
    }
}

const DEFAULT_BETA_MAX: f64 = 50.0;

/// Spectral decomposition of a model plus thermal-state machinery:
/// `<.>_beta`, the energy <-> inverse-temperature map, and cached
/// eigenbasis diagonals of Pauli observables.
pub struct ThermalContext {
    model: HamiltonianModel,
    sd: SpectralDecomposition,
    h_norm: f64,
    beta_max: f64,
    diag_cache: RefCell<HashMap<PauliString, Rc<Vec<f64>>>>,
    beta_cache: RefCell<Vec<Option<f64>>>,
}

impl ThermalContext {
    pub fn new(model: HamiltonianModel) -> Result<Self, EthError> {
        let sd = sim::eig(&sim::build_dense(&model, None)?)?;
        let h_norm = sd.spectral_norm();
        let dim = sd.dim();
        let ctx = ThermalContext {
            model,
            sd,
            h_norm,
            beta_max: DEFAULT_BETA_MAX,
            diag_cache: RefCell::new(HashMap::new()),
            beta_cache: RefCell::new(vec![None; dim]),
        };
        // <H>_beta must be decreasing on the cache grid; at double precision
        // the tails saturate exactly, so pairwise equality is tolerated as
        // long as the range decreases strictly overall.
        let mut prev = f64::INFINITY;
        let mut first = None;
        let mut last = 0.0;
        for k in 0..=40 {
            let beta = -ctx.beta_max + k as f64 * (2.0 * ctx.beta_max / 40.0);
            let e = ctx.mean_energy(beta)?;
            if e > prev {
                return Err(EthError::BadArgument(format!(
                    "<H>_beta not decreasing at beta = {beta}"
                )));
            }
            if first.is_none() {
                first = Some(e);
            }
            prev = e;
            last = e;
        }
        if first.unwrap() <= last {
            return Err(EthError::BadArgument("<H>_beta is constant".into()));
        }
        Ok(ctx)
    }

    pub fn model(&self) -> &HamiltonianModel {
        &self.model
    }

    pub fn decomposition(&self) -> &SpectralDecomposition {
        &self.sd
    }

    pub fn dim(&self) -> usize {
        self.sd.dim()
    }

    pub fn spectral_norm(&self) -> f64 {
        self.h_norm
    }

    /// Eigenbasis diagonal `<E_i|P|E_i>`, cached per operator.
    pub fn pauli_diag(&self, p: &PauliString) -> Result<Rc<Vec<f64>>, EthError> {
        if let Some(d) = self.diag_cache.borrow().get(p) {
            return Ok(d.clone());
        }
        let v = self.sd.eigenvectors();
        let dim = self.dim();
        let mut diag = Vec::with_capacity(dim);
        for i in 0..dim {
            let col = v.column(i).into_owned();
            let pe = sim::apply_pauli(p, &col)?;
            diag.push(col.dotc(&pe).re);
        }
        let rc = Rc::new(diag);
        self.diag_cache.borrow_mut().insert(*p, rc.clone());
        Ok(rc)
    }

    /// Normalized thermal weights. Max-shift normalization keeps every
    /// exponent non-positive, so overflow cannot occur at any finite beta;
    /// far beyond the guard every weight underflows onto the extremal
    /// eigenstate and the thermal map stops being meaningful.
    pub fn weights(&self, beta: f64) -> Result<Vec<f64>, EthError> {
        if !beta.is_finite() || beta.abs() * self.h_norm.max(1.0) > 1e4 {
            return Err(EthError::BetaOutOfRange(beta));
        }
        let evals = self.sd.eigenvalues();
        let e_ref = if beta >= 0.0 { evals[0] } else { evals[evals.len() - 1] };
        let mut w: Vec<f64> = evals.iter().map(|&e| (-beta * (e - e_ref)).exp()).collect();
        let z: f64 = w.iter().sum();
        for x in &mut w {
            *x /= z;
        }
        Ok(w)
    }

    /// `Trace(P e^{-beta H}) / Trace(e^{-beta H})`.
    pub fn thermal_expect(&self, p: &PauliString, beta: f64) -> Result<f64, EthError> {
        let w = self.weights(beta)?;
        let d = self.pauli_diag(p)?;
        Ok(w.iter().zip(d.iter()).map(|(a, b)| a * b).sum())
    }

    /// `<H>_beta`.
    pub fn mean_energy(&self, beta: f64) -> Result<f64, EthError> {
        let w = self.weights(beta)?;
        Ok(w.iter()
            .zip(self.sd.eigenvalues().iter())
            .map(|(a, b)| a * b)
            .sum())
    }

    /// Invert `<H>_beta = e` by bisection on `[-beta_max, beta_max]`.
    pub fn beta_of_energy(&self, e: f64) -> Result<f64, EthError> {
        let tol = 1e-8 * self.h_norm.max(1e-300);
        let (mut lo, mut hi) = (-self.beta_max, self.beta_max);
        // <H>_beta is decreasing: energy at lo is the max attainable.
        let e_hi = self.mean_energy(lo)?;
        let e_lo = self.mean_energy(hi)?;
        if e < e_lo - tol || e > e_hi + tol {
            return Err(EthError::EnergyOutOfRange(e, self.beta_max));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let em = self.mean_energy(mid)?;
            if (em - e).abs() <= tol {
                return Ok(mid);
            }
            if em > e {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// `beta(E_i)` for an eigenstate, memoized.
    pub fn beta_of_eigenstate(&self, i: usize) -> Result<f64, EthError> {
        if let Some(b) = self.beta_cache.borrow()[i] {
            return Ok(b);
        }
        let b = self.beta_of_energy(self.sd.eigenvalues()[i])?;
        self.beta_cache.borrow_mut()[i] = Some(b);
        Ok(b)
    }

    /// Index window of eigenstates whose `beta(E_i)` lies in `[beta1, beta2]`.
    pub fn window_from_beta_range(&self, beta1: f64, beta2: f64) -> Result<EnergyWindow, EthError> {
        if beta1 > beta2 {
            return Err(EthError::BadArgument("beta1 must be <= beta2".into()));
        }
        // beta is decreasing in energy: the window is contiguous in index.
        let mut lo = None;
        let mut hi = 0;
        for i in 0..self.dim() {
            let b = match self.beta_of_eigenstate(i) {
                Ok(b) => b,
                Err(EthError::EnergyOutOfRange(..)) => continue,
                Err(e) => return Err(e),
            };
            if b >= beta1 && b <= beta2 {
                if lo.is_none() {
                    lo = Some(i);
                }
                hi = i + 1;
            }
        }
        let lo = lo.ok_or(EthError::EmptyWindow)?;
        Ok(EnergyWindow { lo, hi })
    }
}

/// Observables accepted by the correlator machinery.
#[derive(Debug, Clone, PartialEq)]
pub enum EthOp {
    Pauli(PauliString),
    Hamiltonian,
}

fn partitions(m: usize) -> Vec<Vec<Vec<usize>>> {
    fn extend(element: usize, m: usize, current: &mut Vec<Vec<usize>>, out: &mut Vec<Vec<Vec<usize>>>) {
        if element == m {
            out.push(current.clone());
            return;
        }
        for b in 0..current.len() {
            current[b].push(element);
            extend(element + 1, m, current, out);
            current[b].pop();
        }
        current.push(vec![element]);
        extend(element + 1, m, current, out);
        current.pop();
    }
    let mut out = Vec::new();
    let mut current = Vec::new();
    extend(0, m, &mut current, &mut out);
    out
}

/// Thermal expectation of an ordered operator product; the order is
/// immaterial because every non-H factor appears with powers of H, which
/// commute with the thermal weights.
fn block_expectation(ctx: &ThermalContext, ops: &[&EthOp], beta: f64) -> Result<f64, EthError> {
    let evals = ctx.sd.eigenvalues();
    let dim = ctx.dim();
    let paulis: Vec<&PauliString> = ops
        .iter()
        .filter_map(|o| match o {
            EthOp::Pauli(p) => Some(p),
            EthOp::Hamiltonian => None,
        })
        .collect();
    let h_power = ops.len() - paulis.len();
    let w = ctx.weights(beta)?;
    match paulis.len() {
        0 => Ok(w
            .iter()
            .zip(evals.iter())
            .map(|(wi, &e)| wi * e.powi(h_power as i32))
            .sum()),
        1 => {
            let d = ctx.pauli_diag(paulis[0])?;
            Ok(w
                .iter()
                .zip(evals.iter())
                .zip(d.iter())
                .map(|((wi, &e), &di)| wi * e.powi(h_power as i32) * di)
                .sum())
        }
        _ => {
            // Dense product in the eigenbasis, diagonal only.
            let v = ctx.sd.eigenvectors();
            let mut acc: Option<DMatrix<Complex64>> = None;
            for op in ops {
                let m = match op {
                    EthOp::Hamiltonian => DMatrix::from_diagonal(&DVector::from_iterator(
                        dim,
                        evals.iter().map(|&e| Complex64::new(e, 0.0)),
                    )),
                    EthOp::Pauli(p) => {
                        let dense = sim::pauli_dense(p);
                        v.ad_mul(&(&dense * v))
                    }
                };
                acc = Some(match acc {
                    None => m,
                    Some(prev) => prev * m,
                });
            }
            let prod = acc.expect("blocks are never empty");
            Ok(w
                .iter()
                .enumerate()
                .map(|(i, wi)| wi * prod[(i, i)].re)
                .sum())
        }
    }
}

/// Connected m-point correlator (m <= 4): the partition sum with
/// `-(-1)^{m+|P|} (|P|-1)!` weights. For m = 2 this is `<AB> - <A><B>`.
pub fn connected_correlator(ctx: &ThermalContext, ops: &[EthOp], beta: f64) -> Result<f64, EthError> {
    let m = ops.len();
    if m == 0 || m > 4 {
        return Err(EthError::TooManyOperators(m));
    }
    let mut total = 0.0f64;
    for partition in partitions(m) {
        let blocks = partition.len();
        let mut product = 1.0f64;
        for block in &partition {
            let refs: Vec<&EthOp> = block.iter().map(|&i| &ops[i]).collect();
            product *= block_expectation(ctx, &refs, beta)?;
        }
        let mut factorial = 1.0f64;
        for k in 1..blocks {
            factorial *= k as f64;
        }
        let sign = if (m + blocks) % 2 == 0 { 1.0 } else { -1.0 };
        total += -sign * factorial * product;
    }
    Ok(total)
}

/// `d^n/dbeta^n <P>_beta = -C^{n+1}(P, H, ..., H)` for n <= 3, cross-checked
/// in tests against central finite differences.
pub fn thermal_derivative(
    ctx: &ThermalContext,
    p: &PauliString,
    beta: f64,
    order: usize,
) -> Result<f64, EthError> {
    if order == 0 {
        return ctx.thermal_expect(p, beta);
    }
    if order > 3 {
        return Err(EthError::OrderTooHigh(order));
    }
    let mut ops = vec![EthOp::Pauli(*p)];
    ops.extend(std::iter::repeat_n(EthOp::Hamiltonian, order));
    Ok(-connected_correlator(ctx, &ops, beta)?)
}

/// Connected eigenstate autocorrelator `G^c(t; E_i)` of a direction
/// `V = sum_a w_a P_a` on the declared time grid, with its running average.
#[derive(Debug, Clone)]
pub struct GcCurve {
    pub t_grid: Vec<f64>,
    pub re: Vec<f64>,
    /// `(1/T) int_0^T Re G^c ds` by trapezoid on the grid.
    pub running_avg: Vec<f64>,
}

/// Row of the eigenbasis matrix of a direction operator restricted to `i`,
/// squared: the ingredients of `G^c(t; E_i) = sum_{j != i} |V_ij|^2 e^{i w_ij t}`.
fn direction_block(
    ctx: &ThermalContext,
    direction: &[f64],
    rows: &EnergyWindow,
) -> Result<DMatrix<Complex64>, EthError> {
    let dim = ctx.dim();
    let v = ctx.sd.eigenvectors();
    let terms = ctx.model.terms();
    if direction.len() != terms.len() {
        return Err(EthError::BadArgument(format!(
            "direction length {} != {} terms",
            direction.len(),
            terms.len()
        )));
    }
    // (P_w V) column by column, then restrict rows to the window.
    let mut pv = DMatrix::from_element(dim, dim, Complex64::new(0.0, 0.0));
    for (w, p) in direction.iter().zip(terms) {
        if *w == 0.0 {
            continue;
        }
        for col in 0..dim {
            let pe = sim::apply_pauli(p, &v.column(col).into_owned())?;
            for row in 0..dim {
                pv[(row, col)] += Complex64::new(*w, 0.0) * pe[row];
            }
        }
    }
    let vw = v.columns(rows.lo, rows.len());
    Ok(vw.ad_mul(&pv))
}

/// `G^c(t; E_i)` for one eigenstate.
pub fn gc_autocorr(
    ctx: &ThermalContext,
    direction: &[f64],
    eigenstate: usize,
    t_grid: &[f64],
) -> Result<GcCurve, EthError> {
    if eigenstate >= ctx.dim() {
        return Err(EthError::BadArgument(format!("eigenstate {eigenstate} out of range")));
    }
    let window = EnergyWindow { lo: eigenstate, hi: eigenstate + 1 };
    let block = direction_block(ctx, direction, &window)?;
    let evals = ctx.sd.eigenvalues();
    let e_i = evals[eigenstate];
    let mut re = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let mut g = Complex64::new(0.0, 0.0);
        for j in 0..ctx.dim() {
            if j == eigenstate {
                continue;
            }
            let v2 = block[(0, j)].norm_sqr();
            g += Complex64::from_polar(v2, (e_i - evals[j]) * t);
        }
        re.push(g.re);
    }
    let running_avg = running_average(t_grid, &re);
    Ok(GcCurve { t_grid: t_grid.to_vec(), re, running_avg })
}

fn running_average(t: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(t.len());
    let mut integral = 0.0f64;
    for k in 0..t.len() {
        if k > 0 {
            integral += 0.5 * (y[k] + y[k - 1]) * (t[k] - t[k - 1]);
        }
        if t[k] > 0.0 {
            out.push(integral / t[k]);
        } else {
            out.push(y[k]);
        }
    }
    out
}

/// Window-projected split `A_H(t) = A_d + A_od + dA` for one direction.
#[derive(Debug, Clone)]
pub struct ADecomposition {
    pub t: f64,
    pub window: EnergyWindow,
    /// ETH diagonal `t <P_w>_{beta(E_i)}` on the window.
    pub a_d: Vec<f64>,
    /// Exact diagonal minus the ETH diagonal.
    pub delta_a: Vec<f64>,
    /// Exact off-diagonal block on the window.
    pub a_od: DMatrix<Complex64>,
    /// Spectral norm of the off-diagonal block.
    pub aod_norm: f64,
    /// `8 sqrt(2) max_i int_{-t}^{t} (1 - |s|/t) G^c(s; E_i) ds`.
    pub f_quadrature: f64,
}

/// Shared precomputation for A-decompositions of one direction: the
/// window-row eigenbasis block and the autocorrelator ingredients.
pub struct DirectionAnalysis<'a> {
    ctx: &'a ThermalContext,
    window: EnergyWindow,
    /// `|W| x dim` eigenbasis block of the direction operator.
    block: DMatrix<Complex64>,
    /// `|V_ij|^2` with the diagonal zeroed (window rows only).
    squared: DMatrix<f64>,
    /// ETH diagonal per unit time on the window.
    eth_diag: Vec<f64>,
    quad_points: usize,
}

impl<'a> DirectionAnalysis<'a> {
    pub fn new(
        ctx: &'a ThermalContext,
        direction: &[f64],
        window: EnergyWindow,
        quad_points: usize,
    ) -> Result<Self, EthError> {
        if window.is_empty() || window.hi > ctx.dim() {
            return Err(EthError::EmptyWindow);
        }
        let block = direction_block(ctx, direction, &window)?;
        let mut squared = DMatrix::zeros(window.len(), ctx.dim());
        for r in 0..window.len() {
            for j in 0..ctx.dim() {
                squared[(r, j)] = block[(r, j)].norm_sqr();
            }
            squared[(r, window.lo + r)] = 0.0;
        }
        // ETH diagonal: thermal expectation of the direction at beta(E_i).
        let terms = ctx.model.terms();
        let mut combined = vec![0.0f64; ctx.dim()];
        for (w, p) in direction.iter().zip(terms) {
            if *w == 0.0 {
                continue;
            }
            let d = ctx.pauli_diag(p)?;
            for (c, x) in combined.iter_mut().zip(d.iter()) {
                *c += w * x;
            }
        }
        let mut eth_diag = Vec::with_capacity(window.len());
        for i in window.indices() {
            let beta = ctx.beta_of_eigenstate(i)?;
            let wts = ctx.weights(beta)?;
            eth_diag.push(wts.iter().zip(&combined).map(|(a, b)| a * b).sum());
        }
        Ok(DirectionAnalysis {
            ctx,
            window,
            block,
            squared,
            eth_diag,
            quad_points: quad_points.max(8),
        })
    }

    /// `G^c(s; E_i)` (real part) for every window eigenstate on an `s` grid;
    /// one matrix-vector product per grid point.
    fn gc_all(&self, s_grid: &[f64]) -> Vec<Vec<f64>> {
        let evals = self.ctx.sd.eigenvalues();
        let dim = self.ctx.dim();
        let nw = self.window.len();
        let mut out = vec![vec![0.0f64; s_grid.len()]; nw];
        for (k, &s) in s_grid.iter().enumerate() {
            let phases = DVector::from_iterator(
                dim,
                evals.iter().map(|&e| Complex64::from_polar(1.0, -e * s)),
            );
            // (M phases)_i * e^{i E_i s}
            for r in 0..nw {
                let mut acc = Complex64::new(0.0, 0.0);
                for j in 0..dim {
                    acc += Complex64::new(self.squared[(r, j)], 0.0) * phases[j];
                }
                let g = acc * Complex64::from_polar(1.0, evals[self.window.lo + r] * s);
                out[r][k] = g.re;
            }
        }
        out
    }

    /// `F(t) = 8 sqrt(2) max_i 2 int_0^t (1 - s/t) Re G^c(s; E_i) ds`.
    pub fn f_quadrature(&self, t: f64) -> f64 {
        let n = self.quad_points;
        let s_grid: Vec<f64> = (0..=n).map(|k| t * k as f64 / n as f64).collect();
        let gc = self.gc_all(&s_grid);
        let mut best = f64::NEG_INFINITY;
        for row in &gc {
            let mut integral = 0.0f64;
            for k in 1..s_grid.len() {
                let w0 = 1.0 - s_grid[k - 1] / t;
                let w1 = 1.0 - s_grid[k] / t;
                integral +=
                    0.5 * (row[k - 1] * w0 + row[k] * w1) * (s_grid[k] - s_grid[k - 1]);
            }
            best = best.max(2.0 * integral);
        }
        8.0 * 2.0f64.sqrt() * best
    }

    /// Full decomposition at one time.
    pub fn decompose(&self, t: f64) -> Result<ADecomposition, EthError> {
        if t < 0.0 {
            return Err(EthError::BadArgument(format!("negative time {t}")));
        }
        let evals = self.ctx.sd.eigenvalues();
        let nw = self.window.len();
        let mut a_od = DMatrix::from_element(nw, nw, Complex64::new(0.0, 0.0));
        for r in 0..nw {
            for c in 0..nw {
                if r == c {
                    continue;
                }
                let (i, j) = (self.window.lo + r, self.window.lo + c);
                a_od[(r, c)] = self.block[(r, j)] * kernel(evals[i] - evals[j], t);
            }
        }
        let aod_norm = if nw > 1 {
            sim::spectral_norm_power(&a_od)
        } else {
            0.0
        };
        let a_d: Vec<f64> = self.eth_diag.iter().map(|d| t * d).collect();
        let delta_a: Vec<f64> = (0..nw)
            .map(|r| t * self.block[(r, self.window.lo + r)].re - a_d[r])
            .collect();
        let f_quadrature = self.f_quadrature(t);
        Ok(ADecomposition {
            t,
            window: self.window,
            a_d,
            delta_a,
            a_od,
            aod_norm,
            f_quadrature,
        })
    }

    /// `(||A_od(t)||_s, F(t))` over a grid; shares all precomputation.
    pub fn aod_norm_curve(&self, t_grid: &[f64]) -> Result<Vec<(f64, f64)>, EthError> {
        let evals = self.ctx.sd.eigenvalues();
        let nw = self.window.len();
        let mut out = Vec::with_capacity(t_grid.len());
        for &t in t_grid {
            let mut a_od = DMatrix::from_element(nw, nw, Complex64::new(0.0, 0.0));
            for r in 0..nw {
                for c in 0..nw {
                    if r == c {
                        continue;
                    }
                    let (i, j) = (self.window.lo + r, self.window.lo + c);
                    a_od[(r, c)] = self.block[(r, j)] * kernel(evals[i] - evals[j], t);
                }
            }
            let norm = if nw > 1 && t > 0.0 {
                sim::spectral_norm_power(&a_od)
            } else {
                0.0
            };
            out.push((norm, if t > 0.0 { self.f_quadrature(t) } else { 0.0 }));
        }
        Ok(out)
    }
}

fn kernel(omega: f64, t: f64) -> Complex64 {
    if omega.abs() < 1e-12 {
        Complex64::new(t, 0.0)
    } else {
        (Complex64::new(1.0, 0.0) - Complex64::from_polar(1.0, -omega * t))
            / Complex64::new(0.0, omega)
    }
}

/// Rank-R split `A_d,a = sum_alpha (b_alpha)_a B_alpha + E_a` built from
/// piecewise Taylor expansions of thermal expectations in beta.
#[derive(Debug, Clone)]
pub struct LowRankApprox {
    pub rank: usize,
    /// Orthonormal vectors in parameter space.
    pub b_vectors: Vec<Vec<f64>>,
    /// Diagonal operators (window-indexed) paired with each vector.
    pub operators: Vec<Vec<f64>>,
    /// Residual diagonal per parameter (Np x |W|).
    pub residual: Vec<Vec<f64>>,
    /// Exact `sup_v ||v^T E||_s` over unit vectors: max column 2-norm.
    pub delta: f64,
    /// Taylor order and window width used.
    pub order: usize,
    pub delta_beta: f64,
}

/// Build the low-rank approximation of the windowed diagonal component at
/// time `t`: Taylor vectors `d^m <P>_beta` (m < order) on beta windows of
/// width `delta_beta`, orthonormalized, with the residual projected so that
/// `b_alpha . E = 0`.
pub fn low_rank_build(
    ctx: &ThermalContext,
    t: f64,
    window: EnergyWindow,
    order: usize,
    delta_beta: f64,
) -> Result<LowRankApprox, EthError> {
    if !(delta_beta > 0.0) {
        return Err(EthError::BadArgument(format!("delta_beta = {delta_beta} must be positive")));
    }
    if order == 0 || order > 4 {
        return Err(EthError::BadArgument(format!("order = {order} must be in 1..=4")));
    }
    if window.is_empty() || window.hi > ctx.dim() {
        return Err(EthError::EmptyWindow);
    }
    let np = ctx.model.n_params();
    let nw = window.len();
    let betas: Vec<f64> = window
        .indices()
        .map(|i| ctx.beta_of_eigenstate(i))
        .collect::<Result<_, _>>()?;
    let beta_lo = betas.iter().cloned().fold(f64::INFINITY, f64::min);
    let beta_hi = betas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let n_windows = (((beta_hi - beta_lo) / delta_beta).ceil() as usize).max(1);

    // Exact windowed diagonal component.
    let mut a_d = DMatrix::zeros(np, nw);
    for (col, &beta) in betas.iter().enumerate() {
        let w = ctx.weights(beta)?;
        for (a, p) in ctx.model.terms().iter().enumerate() {
            let d = ctx.pauli_diag(p)?;
            a_d[(a, col)] = t * w.iter().zip(d.iter()).map(|(x, y)| x * y).sum::<f64>();
        }
    }

    // Taylor vectors at the left edge of each beta window.
    let mut vectors = DMatrix::zeros(np, n_windows * order);
    for j in 0..n_windows {
        let beta_j = beta_lo + j as f64 * delta_beta;
        for m in 0..order {
            for (a, p) in ctx.model.terms().iter().enumerate() {
                vectors[(a, j * order + m)] = thermal_derivative(ctx, p, beta_j, m)?;
            }
        }
    }
    let svd = vectors.clone().svd(true, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let u = svd.u.as_ref().expect("svd computed with u");
    let mut b_vectors: Vec<Vec<f64>> = Vec::new();
    for k in 0..svd.singular_values.len() {
        if svd.singular_values[k] > 1e-12 * smax.max(f64::MIN_POSITIVE) {
            b_vectors.push(u.column(k).iter().copied().collect());
        }
    }
    let rank = b_vectors.len();

    // Projection onto span{b}: operators U^T A_d, residual (I - U U^T) A_d.
    let mut operators = Vec::with_capacity(rank);
    let mut projection = DMatrix::zeros(np, nw);
    for b in &b_vectors {
        let bv = DVector::from_column_slice(b);
        let coeffs = a_d.tr_mul(&bv); // |W| entries: b^T A_d per state
        operators.push(coeffs.iter().copied().collect());
        projection += bv * coeffs.transpose();
    }
    let residual_m = &a_d - projection;
    let mut delta = 0.0f64;
    for col in 0..nw {
        let norm = residual_m.column(col).norm();
        delta = delta.max(norm);
    }
    let residual: Vec<Vec<f64>> = (0..np)
        .map(|a| residual_m.row(a).iter().copied().collect())
        .collect();
    Ok(LowRankApprox {
        rank,
        b_vectors,
        operators,
        residual,
        delta,
        order,
        delta_beta,
    })
}

/// Fit the envelope `|d^m <P>_beta / m!| <= (m^gamma B)^m` from measured
/// derivatives with m = 1..3 across the window's beta range.
pub fn fit_derivative_envelope(
    ctx: &ThermalContext,
    window: EnergyWindow,
    beta_samples: usize,
) -> Result<(f64, f64), EthError> {
    let betas: Vec<f64> = window
        .indices()
        .map(|i| ctx.beta_of_eigenstate(i))
        .collect::<Result<_, _>>()?;
    let beta_lo = betas.iter().cloned().fold(f64::INFINITY, f64::min);
    let beta_hi = betas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let n = beta_samples.max(2);
    let mut d = [0.0f64; 3];
    for k in 0..n {
        let beta = beta_lo + (beta_hi - beta_lo) * k as f64 / (n - 1) as f64;
        for (m, slot) in d.iter_mut().enumerate() {
            let order = m + 1;
            let mut fact = 1.0f64;
            for q in 2..=order {
                fact *= q as f64;
            }
            for p in ctx.model.terms() {
                let v = thermal_derivative(ctx, p, beta, order)?.abs() / fact;
                *slot = slot.max(v.powf(1.0 / order as f64));
            }
        }
    }
    // Least squares of log d_m = gamma log m + log B over m = 1, 2, 3, then
    // inflate B so that every constraint holds.
    let xs: Vec<f64> = (1..=3).map(|m| (m as f64).ln()).collect();
    let ys: Vec<f64> = d.iter().map(|v| v.max(1e-300).ln()).collect();
    let xm = xs.iter().sum::<f64>() / 3.0;
    let ym = ys.iter().sum::<f64>() / 3.0;
    let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let gamma = (sxy / sxx).max(0.0);
    let mut b = 0.0f64;
    for (m, dm) in d.iter().enumerate() {
        let mm = (m + 1) as f64;
        b = b.max(dm / mm.powf(gamma));
    }
    Ok((b, gamma))
}

/// Rank ceiling `R(delta, t) <= 2 B |b2 - b1| log2(t sqrt(Np)/delta)^(gamma+1)`
/// implied by a derivative envelope `|d^m <P>/m!| <= (m^gamma B)^m`.
pub fn rank_bound_formula(
    b: f64,
    gamma: f64,
    beta_span: f64,
    t: f64,
    n_params: usize,
    delta: f64,
) -> f64 {
    2.0 * b * beta_span * (t * (n_params as f64).sqrt() / delta).log2().max(0.0).powf(gamma + 1.0)
}

/// Mean consecutive-gap ratio `min(s_i, s_{i+1}) / max(s_i, s_{i+1})` over a
/// window, optionally resolved within sectors of a basis-permutation
/// symmetry (eigenstates are classified by the sign of `<psi|R|psi>`).
pub fn level_stats(
    ctx: &ThermalContext,
    window: EnergyWindow,
    symmetry: Option<&[usize]>,
) -> Result<f64, EthError> {
    if window.len() < 100 {
        return Err(EthError::TooFewLevels(window.len(), 100));
    }
    let evals = ctx.sd.eigenvalues();
    let groups: Vec<Vec<f64>> = match symmetry {
        None => vec![window.indices().map(|i| evals[i]).collect()],
        Some(perm) => {
            let v = ctx.sd.eigenvectors();
            let mut even = Vec::new();
            let mut odd = Vec::new();
            for i in window.indices() {
                let col = v.column(i);
                let mut parity = Complex64::new(0.0, 0.0);
                for b in 0..ctx.dim() {
                    parity += col[perm[b]].conj() * col[b];
                }
                if parity.re >= 0.0 {
                    even.push(evals[i]);
                } else {
                    odd.push(evals[i]);
                }
            }
            vec![even, odd]
        }
    };
    let mut ratios = Vec::new();
    for g in &groups {
        for w in g.windows(3) {
            let s1 = w[1] - w[0];
            let s2 = w[2] - w[1];
            if s1 > 0.0 && s2 > 0.0 {
                ratios.push(s1.min(s2) / s1.max(s2));
            }
        }
    }
    if ratios.is_empty() {
        return Err(EthError::TooFewLevels(0, 3));
    }
    Ok(ratios.iter().sum::<f64>() / ratios.len() as f64)
}

/// Plain r-ratio of a raw sorted spectrum (synthetic/reference ensembles).
pub fn r_ratio_of_levels(levels: &[f64]) -> f64 {
    let mut ratios = Vec::new();
    for w in levels.windows(3) {
        let s1 = w[1] - w[0];
        let s2 = w[2] - w[1];
        if s1 > 0.0 && s2 > 0.0 {
            ratios.push(s1.min(s2) / s1.max(s2));
        }
    }
    ratios.iter().sum::<f64>() / ratios.len().max(1) as f64
}

/// Largest deviation of eigenstate expectations from the microcanonical
/// window average, over a window of eigenstates.
pub fn diagonal_eth_deviation(
    ctx: &ThermalContext,
    p: &PauliString,
    window: EnergyWindow,
    micro_window_fraction: f64,
) -> Result<f64, EthError> {
    let evals = ctx.sd.eigenvalues();
    let diag = ctx.pauli_diag(p)?;
    let span = evals[evals.len() - 1] - evals[0];
    let half = 0.5 * micro_window_fraction * span;
    let mut worst = 0.0f64;
    for i in window.indices() {
        let (mut acc, mut count) = (0.0f64, 0usize);
        for j in 0..ctx.dim() {
            if (evals[j] - evals[i]).abs() <= half {
                acc += diag[j];
                count += 1;
            }
        }
        let micro = acc / count as f64;
        worst = worst.max((diag[i] - micro).abs());
    }
    Ok(worst)
}

/// Single-parameter QFI growth curves for a group of terms sharing one
/// unknown coefficient, across preparations.
#[derive(Debug, Clone)]
pub struct QfiGrowthReport {
    pub t_grid: Vec<f64>,
    pub labels: Vec<String>,
    pub curves: Vec<Vec<f64>>,
    /// Late-window log-log slope per preparation.
    pub fitted_exponents: Vec<f64>,
    /// First curve over the best of the rest, at the final grid point.
    pub ratio_at_t_max: f64,
}

/// QFI(t) per preparation for the direction selecting `group` (indicator
/// vector, matching a single unknown coefficient on the summed terms).
pub fn ghz_qfi_demo(
    model: &HamiltonianModel,
    group: &[usize],
    t_grid: &[f64],
    preps: &[(String, StatePrep)],
) -> Result<QfiGrowthReport, EthError> {
    if preps.is_empty() || group.is_empty() {
        return Err(EthError::BadArgument("need at least one prep and one group term".into()));
    }
    let sd = sim::eig(&sim::build_dense(model, None)?)?;
    let mut direction = vec![0.0; model.n_params()];
    for &a in group {
        if a >= model.n_params() {
            return Err(EthError::BadArgument(format!("group index {a} out of range")));
        }
        direction[a] = 1.0;
    }
    let states: Vec<crate::sim::StateVector> = preps
        .iter()
        .map(|(_, p)| p.realize(model.n_qubits()))
        .collect::<Result<_, _>>()?;
    let mut curves = vec![Vec::with_capacity(t_grid.len()); preps.len()];
    for &t in t_grid {
        let a = fisher::a_operator_for_direction(&sd, model.terms(), &direction, t)?;
        for (k, psi) in states.iter().enumerate() {
            let applied = &a * psi.amplitudes();
            let mean = psi.amplitudes().dotc(&applied).re;
            let second = applied.dotc(&applied).re;
            curves[k].push(4.0 * (second - mean * mean));
        }
    }
    // Late-window power-law fit: last third of the positive-t grid.
    let mut fitted_exponents = Vec::with_capacity(preps.len());
    let start = t_grid.len() - (t_grid.len() / 3).max(2);
    for curve in &curves {
        let pts: Vec<(f64, f64)> = t_grid[start..]
            .iter()
            .zip(&curve[start..])
            .filter(|(&t, &q)| t > 0.0 && q > 0.0)
            .map(|(&t, &q)| (t.ln(), q.ln()))
            .collect();
        fitted_exponents.push(slope_of(&pts));
    }
    let last = t_grid.len() - 1;
    let best_other = curves[1..]
        .iter()
        .map(|c| c[last])
        .fold(f64::MIN_POSITIVE, f64::max);
    Ok(QfiGrowthReport {
        t_grid: t_grid.to_vec(),
        labels: preps.iter().map(|(l, _)| l.clone()).collect(),
        curves: curves.clone(),
        fitted_exponents,
        ratio_at_t_max: curves[0][last] / best_other,
    })
}

fn slope_of(pts: &[(f64, f64)]) -> f64 {
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Headline ETH diagnostics for one model.
#[derive(Debug, Clone)]
pub struct EthReport {
    pub r_ratio: f64,
    pub t_grid: Vec<f64>,
    pub aod_norm_over_sqrt_t: Vec<f64>,
    pub gc_running_avg: Vec<f64>,
    /// `(rank, delta)` pairs from the low-rank sweep.
    pub rank_error_table: Vec<(usize, f64)>,
    /// F at the final grid time.
    pub f: f64,
}

/// Knobs for [`eth_report`]; defaults match the configured chaotic chain.
#[derive(Debug, Clone)]
pub struct EthConfig {
    pub t_max: f64,
    pub grid_points: usize,
    pub quad_points: usize,
    /// Direction index for the off-diagonal/autocorrelator probes; `None`
    /// picks the transverse-field term nearest the chain center.
    pub probe_term: Option<usize>,
    pub use_reflection_symmetry: bool,
    /// `(order, delta_beta)` pairs for the rank sweep.
    pub rank_sweep: Vec<(usize, f64)>,
}

impl Default for EthConfig {
    fn default() -> Self {
        EthConfig {
            t_max: 200.0,
            grid_points: 40,
            quad_points: 400,
            probe_term: None,
            use_reflection_symmetry: true,
            rank_sweep: vec![(1, 0.05), (1, 0.1), (2, 0.1), (3, 0.1), (3, 0.2)],
        }
    }
}

/// Pick the transverse-field (X) term nearest the chain center.
pub fn default_probe_term(model: &HamiltonianModel) -> usize {
    let n = model.n_qubits();
    let mut best = 0usize;
    let mut best_score = usize::MAX;
    for (a, p) in model.terms().iter().enumerate() {
        if p.weight() == 1 {
            let q = p.support().next().unwrap();
            if p.letter(q) == Pauli::X {
                let score = (2 * q).abs_diff(n - 1);
                if score < best_score {
                    best_score = score;
                    best = a;
                }
            }
        }
    }
    best
}

pub fn eth_report(model: &HamiltonianModel, cfg: &EthConfig) -> Result<EthReport, EthError> {
    let ctx = ThermalContext::new(model.clone())?;
    let window = EnergyWindow::middle_third(ctx.dim());
    let perm;
    let symmetry = if cfg.use_reflection_symmetry {
        perm = site_reversal_permutation(model.n_qubits());
        Some(perm.as_slice())
    } else {
        None
    };
    let r_ratio = level_stats(&ctx, window, symmetry)?;

    let probe = cfg.probe_term.unwrap_or_else(|| default_probe_term(model));
    let mut direction = vec![0.0; model.n_params()];
    direction[probe] = 1.0;
    let analysis = DirectionAnalysis::new(&ctx, &direction, window, cfg.quad_points)?;
    let t_grid: Vec<f64> = (1..=cfg.grid_points)
        .map(|k| cfg.t_max * k as f64 / cfg.grid_points as f64)
        .collect();
    let curve = analysis.aod_norm_curve(&t_grid)?;
    let aod_norm_over_sqrt_t: Vec<f64> = t_grid
        .iter()
        .zip(&curve)
        .map(|(&t, (norm, _))| norm / t.sqrt())
        .collect();
    let f = curve.last().map(|(_, f)| *f).unwrap_or(0.0);

    let mid_state = window.lo + window.len() / 2;
    let gc = gc_autocorr(&ctx, &direction, mid_state, &t_grid)?;

    let mut rank_error_table = Vec::new();
    for &(order, delta_beta) in &cfg.rank_sweep {
        let lr = low_rank_build(&ctx, cfg.t_max, window, order, delta_beta)?;
        rank_error_table.push((lr.rank, lr.delta));
    }

    Ok(EthReport {
        r_ratio,
        t_grid,
        aod_norm_over_sqrt_t,
        gc_running_avg: gc.running_avg,
        rank_error_table,
        f,
    })
}

#[derive(Serialize)]
struct EthExport<'a> {
    t_grid: &'a [f64],
    aod_norm_over_sqrt_t: &'a [f64],
    gc_running_avg: &'a [f64],
    rank_error_table: &'a [(usize, f64)],
    r_ratio: f64,
    #[serde(rename = "F")]
    f: f64,
}

impl EthReport {
    pub fn export_json<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let e = EthExport {
            t_grid: &self.t_grid,
            aod_norm_over_sqrt_t: &self.aod_norm_over_sqrt_t,
            gc_running_avg: &self.gc_running_avg,
            rank_error_table: &self.rank_error_table,
            r_ratio: self.r_ratio,
            f: self.f,
        };
        serde_json::to_writer(&mut w, &e)?;
        Ok(())
    }
}
