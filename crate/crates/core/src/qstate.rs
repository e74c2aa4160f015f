//! Dense pure-state engine for small qubit registers.
//!
//! Qubit ordering is big-endian throughout: qubit 0 is the most significant
//! bit of a basis index. Every closed-form result elsewhere in the crate is
//! checked against this module.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, Matrix2};
use num_complex::Complex64;
use thiserror::Error;

/// Largest register the engine will allocate by default.
pub const MAX_QUBITS: usize = 20;

/// Tolerance for exact-math assertions on amplitudes and probabilities.
pub const EXACT_TOL: f64 = 1e-12;

/// Branches whose probability falls below this are reported as empty.
const ZERO_BRANCH: f64 = 1e-24;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StateError {
    #[error("register of {requested} qubits exceeds the cap of {cap}")]
    TooManyQubits { requested: usize, cap: usize },
    #[error("amplitude vector of length {len} does not describe a qubit register")]
    BadLength { len: usize },
    #[error("state is not normalized (norm² = {norm_sq})")]
    NotNormalized { norm_sq: f64 },
    #[error("invalid bipartition: {0}")]
    BadBipartition(String),
    #[error("projector basis is not orthonormal (max Gram deviation {deviation:e})")]
    NotOrthonormal { deviation: f64 },
    #[error("qubit index {qubit} out of range for a {num_qubits}-qubit state")]
    QubitOutOfRange { qubit: usize, num_qubits: usize },
    #[error("dimension mismatch: {0} vs {1} qubits")]
    DimensionMismatch(usize, usize),
    #[error("invalid Schmidt vector: {0}")]
    BadSchmidtVector(String),
}

pub type Result<T> = std::result::Result<T, StateError>;

/// A normalized pure state of `num_qubits` qubits.
///
/// A zero-qubit state (a single amplitude) is allowed as the residual of a
/// measurement that consumes every qubit.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    num_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl PureState {
    /// Wraps an amplitude vector, checking length and normalization.
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        let num_qubits = qubits_for_len(amplitudes.len())?;
        let norm_sq = norm_sq(&amplitudes);
        if (norm_sq - 1.0).abs() > EXACT_TOL {
            return Err(StateError::NotNormalized { norm_sq });
        }
        Ok(Self {
            num_qubits,
            amplitudes,
        })
    }

    /// Rescales an arbitrary non-zero vector to unit norm.
    pub fn normalized(mut amplitudes: Vec<Complex64>) -> Result<Self> {
        let num_qubits = qubits_for_len(amplitudes.len())?;
        let norm_sq = norm_sq(&amplitudes);
        if norm_sq <= ZERO_BRANCH {
            return Err(StateError::NotNormalized { norm_sq });
        }
        let scale = norm_sq.sqrt().recip();
        amplitudes.iter_mut().for_each(|a| *a *= scale);
        Ok(Self {
            num_qubits,
            amplitudes,
        })
    }

    /// Real-amplitude convenience constructor; normalizes its input.
    pub fn from_real(amplitudes: &[f64]) -> Result<Self> {
        Self::normalized(amplitudes.iter().map(|&a| Complex64::new(a, 0.0)).collect())
    }

    /// Computational basis state `|index⟩`.
    pub fn basis(num_qubits: usize, index: usize) -> Result<Self> {
        check_cap(num_qubits)?;
        let dim = 1usize << num_qubits;
        if index >= dim {
            return Err(StateError::BadLength { len: index });
        }
        let mut amplitudes = vec![ZERO; dim];
        amplitudes[index] = ONE;
        Ok(Self {
            num_qubits,
            amplitudes,
        })
    }

    /// `(|0…0⟩ + |1…1⟩)/√2` on `m` qubits.
    pub fn cat(m: usize) -> Result<Self> {
        check_cap(m)?;
        if m == 0 {
            return Err(StateError::BadLength { len: 1 });
        }
        let dim = 1usize << m;
        let mut amps = vec![ZERO; dim];
        amps[0] = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        amps[dim - 1] += Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        Self::normalized(amps)
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn amplitude(&self, index: usize) -> Complex64 {
        self.amplitudes[index]
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &PureState) -> Result<Complex64> {
        if self.num_qubits != other.num_qubits {
            return Err(StateError::DimensionMismatch(
                self.num_qubits,
                other.num_qubits,
            ));
        }
        Ok(self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// `|⟨self|other⟩|²`.
    pub fn fidelity(&self, other: &PureState) -> Result<f64> {
        Ok(self.inner(other)?.norm_sqr())
    }

    /// Indices and values of amplitudes with modulus above `tol`.
    pub fn support(&self, tol: f64) -> Vec<(usize, Complex64)> {
        self.amplitudes
            .iter()
            .enumerate()
            .filter(|(_, a)| a.norm() > tol)
            .map(|(i, a)| (i, *a))
            .collect()
    }

    /// Largest per-amplitude deviation after removing the relative global
    /// phase between the two states.
    pub fn max_amplitude_deviation(&self, other: &PureState) -> Result<f64> {
        let overlap = self.inner(other)?;
        let phase = if overlap.norm() > 0.0 {
            overlap / overlap.norm()
        } else {
            ONE
        };
        Ok(self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| (a * phase - b).norm())
            .fold(0.0, f64::max))
    }

    pub(crate) fn bit_mask(&self, qubit: usize) -> usize {
        1 << (self.num_qubits - 1 - qubit)
    }
}

fn norm_sq(amps: &[Complex64]) -> f64 {
    amps.iter().map(|a| a.norm_sqr()).sum()
}

fn check_cap(n: usize) -> Result<()> {
    if n > MAX_QUBITS {
        Err(StateError::TooManyQubits {
            requested: n,
            cap: MAX_QUBITS,
        })
    } else {
        Ok(())
    }
}

fn qubits_for_len(len: usize) -> Result<usize> {
    if len == 0 || !len.is_power_of_two() {
        return Err(StateError::BadLength { len });
    }
    let n = len.trailing_zeros() as usize;
    check_cap(n)?;
    Ok(n)
}

/// Squared Schmidt coefficients, sorted in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct SchmidtVector {
    coefficients: Vec<f64>,
}

impl SchmidtVector {
    /// Sorts (stably, descending) and validates a probability vector.
    ///
    /// Entries within `1e-12` below zero are clamped to zero to absorb
    /// round-off from numerical decompositions.
    pub fn new(mut coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(StateError::BadSchmidtVector("empty".into()));
        }
        for c in coefficients.iter_mut() {
            if !c.is_finite() || *c < -EXACT_TOL {
                return Err(StateError::BadSchmidtVector(format!(
                    "entry {c} is negative or not finite"
                )));
            }
            *c = c.max(0.0);
        }
        let total: f64 = coefficients.iter().sum();
        if (total - 1.0).abs() > EXACT_TOL {
            return Err(StateError::BadSchmidtVector(format!(
                "entries sum to {total}"
            )));
        }
        coefficients.sort_by(|a, b| b.total_cmp(a));
        Ok(Self { coefficients })
    }

    /// The uniform vector `(1/d, …, 1/d)`.
    pub fn uniform(d: usize) -> Self {
        Self {
            coefficients: vec![1.0 / d as f64; d],
        }
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// Number of strictly positive entries.
    pub fn rank(&self) -> usize {
        self.coefficients.iter().filter(|&&c| c > 0.0).count()
    }

    /// Copy zero-padded to length `n` (never truncates).
    pub fn padded(&self, n: usize) -> Vec<f64> {
        let mut v = self.coefficients.clone();
        if v.len() < n {
            v.resize(n, 0.0);
        }
        v
    }
}

/// A split of a register into two non-empty complementary qubit sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bipartition {
    side_a: Vec<usize>,
    side_b: Vec<usize>,
}

impl Bipartition {
    pub fn new(side_a: &[usize], num_qubits: usize) -> Result<Self> {
        let a: BTreeSet<usize> = side_a.iter().copied().collect();
        if a.len() != side_a.len() {
            return Err(StateError::BadBipartition("repeated qubit".into()));
        }
        if let Some(&q) = a.iter().find(|&&q| q >= num_qubits) {
            return Err(StateError::QubitOutOfRange {
                qubit: q,
                num_qubits,
            });
        }
        if a.is_empty() || a.len() == num_qubits {
            return Err(StateError::BadBipartition(
                "both sides must be non-empty".into(),
            ));
        }
        let side_b = (0..num_qubits).filter(|q| !a.contains(q)).collect();
        Ok(Self {
            side_a: side_a.to_vec(),
            side_b,
        })
    }

    pub fn side_a(&self) -> &[usize] {
        &self.side_a
    }

    pub fn side_b(&self) -> &[usize] {
        &self.side_b
    }

    pub fn num_qubits(&self) -> usize {
        self.side_a.len() + self.side_b.len()
    }
}

/// Kronecker product of the inputs in the order given.
pub fn tensor(parts: &[PureState]) -> Result<PureState> {
    let total: usize = parts.iter().map(|p| p.num_qubits).sum();
    check_cap(total)?;
    let mut amplitudes = vec![ONE];
    for part in parts {
        let mut next = Vec::with_capacity(amplitudes.len() * part.dim());
        for a in &amplitudes {
            next.extend(part.amplitudes.iter().map(|b| a * b));
        }
        amplitudes = next;
    }
    PureState::normalized(amplitudes)
}

/// Gathers the sub-index formed by `qubits` (in the listed order) from a
/// full basis index.
fn gather(index: usize, qubits: &[usize], n: usize) -> usize {
    qubits
        .iter()
        .fold(0, |acc, &q| (acc << 1) | ((index >> (n - 1 - q)) & 1))
}

/// Squared Schmidt coefficients of `state` across `cut`, from the singular
/// values of the reshaped amplitude matrix.
pub fn schmidt(state: &PureState, cut: &Bipartition) -> Result<SchmidtVector> {
    let n = state.num_qubits;
    if cut.num_qubits() != n {
        return Err(StateError::DimensionMismatch(cut.num_qubits(), n));
    }
    let rows = 1usize << cut.side_a.len();
    let cols = 1usize << cut.side_b.len();
    let mut m = DMatrix::<Complex64>::zeros(rows, cols);
    for (index, amp) in state.amplitudes.iter().enumerate() {
        let r = gather(index, &cut.side_a, n);
        let c = gather(index, &cut.side_b, n);
        m[(r, c)] = *amp;
    }
    let singular = m.singular_values();
    let mut coefficients: Vec<f64> = singular.iter().map(|s| s * s).collect();
    // Round-off can leave the sum a few ulps off; renormalize.
    let total: f64 = coefficients.iter().sum();
    coefficients.iter_mut().for_each(|c| *c /= total);
    SchmidtVector::new(coefficients)
}

/// One outcome of a projective measurement.
#[derive(Debug, Clone)]
pub struct Branch {
    pub probability: f64,
    /// Renormalized residual on the unmeasured qubits, `None` when the
    /// branch has zero probability.
    pub state: Option<PureState>,
}

/// Projects `targets` onto each element of `basis` and returns, per
/// element, the click probability and the renormalized residual state on
/// the remaining qubits (kept in ascending order).
pub fn project(state: &PureState, basis: &[PureState], targets: &[usize]) -> Result<Vec<Branch>> {
    let n = state.num_qubits;
    let k = targets.len();
    let mut seen = BTreeSet::new();
    for &q in targets {
        if q >= n {
            return Err(StateError::QubitOutOfRange {
                qubit: q,
                num_qubits: n,
            });
        }
        if !seen.insert(q) {
            return Err(StateError::BadBipartition("repeated target qubit".into()));
        }
    }
    for b in basis {
        if b.num_qubits != k {
            return Err(StateError::DimensionMismatch(b.num_qubits, k));
        }
    }
    let mut deviation: f64 = 0.0;
    for (i, a) in basis.iter().enumerate() {
        for (j, b) in basis.iter().enumerate() {
            let expected = if i == j { 1.0 } else { 0.0 };
            deviation = deviation.max((a.inner(b)? - expected).norm());
        }
    }
    if deviation > 1e-9 {
        return Err(StateError::NotOrthonormal { deviation });
    }

    let rest: Vec<usize> = (0..n).filter(|q| !seen.contains(q)).collect();
    let rest_dim = 1usize << rest.len();
    let mut branches = Vec::with_capacity(basis.len());
    for element in basis {
        let mut residual = vec![ZERO; rest_dim];
        for (index, amp) in state.amplitudes.iter().enumerate() {
            if *amp == ZERO {
                continue;
            }
            let t = gather(index, targets, n);
            let r = gather(index, &rest, n);
            residual[r] += element.amplitudes[t].conj() * amp;
        }
        let probability = norm_sq(&residual);
        let state = if probability > ZERO_BRANCH {
            Some(PureState::normalized(residual)?)
        } else {
            None
        };
        branches.push(Branch { probability, state });
    }
    Ok(branches)
}

/// Applies a single-qubit operator and returns the squared norm of the
/// unnormalized result together with the renormalized state.
///
/// When the result vanishes the input state is returned unchanged with a
/// zero norm.
pub fn apply_operator(
    state: &PureState,
    op: &Matrix2<Complex64>,
    qubit: usize,
) -> Result<(f64, PureState)> {
    if qubit >= state.num_qubits {
        return Err(StateError::QubitOutOfRange {
            qubit,
            num_qubits: state.num_qubits,
        });
    }
    let mask = state.bit_mask(qubit);
    let mut out = state.amplitudes.clone();
    for i0 in 0..state.dim() {
        if i0 & mask != 0 {
            continue;
        }
        let i1 = i0 | mask;
        let (a0, a1) = (state.amplitudes[i0], state.amplitudes[i1]);
        out[i0] = op[(0, 0)] * a0 + op[(0, 1)] * a1;
        out[i1] = op[(1, 0)] * a0 + op[(1, 1)] * a1;
    }
    let norm = norm_sq(&out);
    if norm <= ZERO_BRANCH {
        return Ok((0.0, state.clone()));
    }
    Ok((norm, PureState::normalized(out)?))
}

/// `true` iff `|⟨a|b⟩| ≥ 1 − tol`.
pub fn equal_up_to_phase(a: &PureState, b: &PureState, tol: f64) -> Result<bool> {
    Ok(a.inner(b)?.norm() >= 1.0 - tol)
}

/// Single-qubit Paulis used for corrections.
pub mod pauli {
    use super::*;

    pub fn identity() -> Matrix2<Complex64> {
        Matrix2::identity()
    }

    pub fn x() -> Matrix2<Complex64> {
        Matrix2::new(ZERO, ONE, ONE, ZERO)
    }

    pub fn z() -> Matrix2<Complex64> {
        Matrix2::new(ONE, ZERO, ZERO, -ONE)
    }

    /// Real diagonal operator `diag(d0, d1)`.
    pub fn diag(d0: f64, d1: f64) -> Matrix2<Complex64> {
        Matrix2::new(
            Complex64::new(d0, 0.0),
            ZERO,
            ZERO,
            Complex64::new(d1, 0.0),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pauli {
    X,
    Z,
}

/// An ordered list of single-qubit Pauli corrections.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PauliFrame {
    pub ops: Vec<(usize, Pauli)>,
}

impl PauliFrame {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, qubit: usize, op: Pauli) {
        self.ops.push((qubit, op));
    }

    pub fn is_identity(&self) -> bool {
        self.ops.is_empty()
    }

    /// Applies the frame to a statevector.
    pub fn apply(&self, state: &PureState) -> Result<PureState> {
        let mut out = state.clone();
        for &(q, op) in &self.ops {
            let m = match op {
                Pauli::X => pauli::x(),
                Pauli::Z => pauli::z(),
            };
            out = apply_operator(&out, &m, q)?.1;
        }
        Ok(out)
    }
}

/// The four Bell states in the order Φ⁺, Φ⁻, Ψ⁺, Ψ⁻.
pub fn bell_basis() -> Vec<PureState> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    [
        [s, 0.0, 0.0, s],
        [s, 0.0, 0.0, -s],
        [0.0, s, s, 0.0],
        [0.0, s, -s, 0.0],
    ]
    .iter()
    .map(|v| PureState::from_real(v).expect("Bell states are normalized"))
    .collect()
}

/// `|+⟩`, `|−⟩`.
pub fn x_basis() -> Vec<PureState> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    vec![
        PureState::from_real(&[s, s]).expect("normalized"),
        PureState::from_real(&[s, -s]).expect("normalized"),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn pair(phi1: f64) -> PureState {
        PureState::from_real(&[(1.0 - phi1).sqrt(), 0.0, 0.0, phi1.sqrt()]).unwrap()
    }

    /// Reduced density matrix of qubit set `keep` by direct partial trace.
    fn reduced(state: &PureState, keep: &[usize]) -> DMatrix<Complex64> {
        let n = state.num_qubits();
        let rest: Vec<usize> = (0..n).filter(|q| !keep.contains(q)).collect();
        let d = 1 << keep.len();
        let mut rho = DMatrix::zeros(d, d);
        for i in 0..state.dim() {
            for j in 0..state.dim() {
                if gather(i, &rest, n) != gather(j, &rest, n) {
                    continue;
                }
                rho[(gather(i, keep, n), gather(j, keep, n))] +=
                    state.amplitude(i) * state.amplitude(j).conj();
            }
        }
        rho
    }

    #[test]
    fn tensor_of_basis_states() {
        let zero = PureState::basis(1, 0).unwrap();
        let t = tensor(&[zero.clone(), zero]).unwrap();
        assert_eq!(t.amplitudes(), &[c(1.0), c(0.0), c(0.0), c(0.0)]);
    }

    #[test]
    fn tensor_of_three_pairs_has_eight_terms() {
        let p = pair(0.4);
        let t = tensor(&[p.clone(), p.clone(), p]).unwrap();
        assert_eq!(t.num_qubits(), 6);
        assert_eq!(t.support(1e-15).len(), 8);
    }

    #[test]
    fn tensor_single_input_is_identity() {
        let p = pair(0.3);
        assert_eq!(tensor(std::slice::from_ref(&p)).unwrap(), p);
    }

    #[test]
    fn tensor_respects_cap() {
        let q = PureState::basis(11, 0).unwrap();
        assert!(matches!(
            tensor(&[q.clone(), q]),
            Err(StateError::TooManyQubits { .. })
        ));
    }

    #[test]
    fn schmidt_examples() {
        let cut = Bipartition::new(&[0], 2).unwrap();
        let bell = PureState::from_real(&[1.0, 0.0, 0.0, 1.0]).unwrap();
        let s = schmidt(&bell, &cut).unwrap();
        assert!((s.coefficients()[0] - 0.5).abs() < EXACT_TOL);
        assert!((s.coefficients()[1] - 0.5).abs() < EXACT_TOL);

        let s = schmidt(&pair(0.4), &cut).unwrap();
        assert!((s.coefficients()[0] - 0.6).abs() < EXACT_TOL);
        assert!((s.coefficients()[1] - 0.4).abs() < EXACT_TOL);

        let product = PureState::basis(2, 0b01).unwrap();
        let s = schmidt(&product, &cut).unwrap();
        assert!((s.coefficients()[0] - 1.0).abs() < EXACT_TOL);
        assert!(s.coefficients()[1].abs() < EXACT_TOL);
    }

    #[test]
    fn schmidt_rejects_degenerate_cut() {
        assert!(Bipartition::new(&[], 2).is_err());
        assert!(Bipartition::new(&[0, 1], 2).is_err());
        assert!(Bipartition::new(&[0, 0], 3).is_err());
        assert!(Bipartition::new(&[4], 3).is_err());
    }

    #[test]
    fn bell_projection_of_00() {
        let s = PureState::basis(2, 0).unwrap();
        let branches = project(&s, &bell_basis(), &[0, 1]).unwrap();
        let probs: Vec<f64> = branches.iter().map(|b| b.probability).collect();
        for (p, e) in probs.iter().zip([0.5, 0.5, 0.0, 0.0]) {
            assert!((p - e).abs() < EXACT_TOL);
        }
        assert!(branches[2].state.is_none());
        assert_eq!(branches[0].state.as_ref().unwrap().num_qubits(), 0);
    }

    #[test]
    fn projecting_all_qubits_of_eigenstate() {
        let ghz = PureState::cat(3).unwrap();
        let basis = [ghz.clone(), PureState::basis(3, 1).unwrap()];
        let branches = project(&ghz, &basis, &[0, 1, 2]).unwrap();
        assert!((branches[0].probability - 1.0).abs() < EXACT_TOL);
        assert!(branches[1].probability < EXACT_TOL);
    }

    #[test]
    fn project_rejects_non_orthonormal_basis() {
        let s = PureState::basis(2, 0).unwrap();
        let basis = [
            PureState::basis(1, 0).unwrap(),
            PureState::from_real(&[1.0, 1.0]).unwrap(),
        ];
        assert!(matches!(
            project(&s, &basis, &[0]),
            Err(StateError::NotOrthonormal { .. })
        ));
    }

    #[test]
    fn residual_qubits_keep_ascending_order() {
        // |0⟩|1⟩|0⟩ measured on the middle qubit leaves |00⟩.
        let s = PureState::basis(3, 0b010).unwrap();
        let b = project(&s, &[PureState::basis(1, 1).unwrap()], &[1]).unwrap();
        assert_eq!(b[0].state.as_ref().unwrap(), &PureState::basis(2, 0).unwrap());
        // |1⟩|0⟩|0⟩ measured on qubit 2 leaves |10⟩.
        let s = PureState::basis(3, 0b100).unwrap();
        let b = project(&s, &[PureState::basis(1, 0).unwrap()], &[2]).unwrap();
        assert_eq!(b[0].state.as_ref().unwrap(), &PureState::basis(2, 0b10).unwrap());
    }

    #[test]
    fn apply_identity() {
        let s = pair(0.2);
        let (n, out) = apply_operator(&s, &pauli::identity(), 1).unwrap();
        assert!((n - 1.0).abs() < EXACT_TOL);
        assert!(out.max_amplitude_deviation(&s).unwrap() < EXACT_TOL);
    }

    #[test]
    fn apply_out_of_range() {
        assert!(apply_operator(&pair(0.2), &pauli::x(), 2).is_err());
    }

    #[test]
    fn equal_up_to_phase_examples() {
        let s = pair(0.3);
        let phased = PureState::new(
            s.amplitudes()
                .iter()
                .map(|a| a * Complex64::from_polar(1.0, 0.7))
                .collect(),
        )
        .unwrap();
        assert!(equal_up_to_phase(&s, &phased, 1e-12).unwrap());
        let a = PureState::basis(2, 0).unwrap();
        let b = PureState::basis(2, 3).unwrap();
        assert!(!equal_up_to_phase(&a, &b, 1e-12).unwrap());

        let ghz = PureState::cat(3).unwrap();
        let mut flipped = ghz.clone();
        for q in 0..3 {
            flipped = apply_operator(&flipped, &pauli::x(), q).unwrap().1;
        }
        assert!(equal_up_to_phase(&ghz, &flipped, 1e-12).unwrap());
        assert!(matches!(
            equal_up_to_phase(&ghz, &a, 1e-12),
            Err(StateError::DimensionMismatch(3, 2))
        ));
    }

    fn arb_state(n: usize) -> impl Strategy<Value = PureState> {
        prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1 << n).prop_filter_map(
            "non-zero",
            |v| PureState::normalized(v.into_iter().map(|(r, i)| Complex64::new(r, i)).collect()).ok(),
        )
    }

    proptest! {
        #[test]
        fn projection_over_complete_basis_sums_to_one(s in arb_state(4), a in 0usize..4, b in 0usize..4) {
            prop_assume!(a != b);
            let branches = project(&s, &bell_basis(), &[a, b]).unwrap();
            let total: f64 = branches.iter().map(|b| b.probability).sum();
            prop_assert!((total - 1.0).abs() < EXACT_TOL);
            for br in branches.iter().filter_map(|b| b.state.as_ref()) {
                let n: f64 = br.amplitudes().iter().map(|a| a.norm_sqr()).sum();
                prop_assert!((n - 1.0).abs() < EXACT_TOL);
            }
        }

        #[test]
        fn two_qubit_schmidt_matches_reduced_spectrum(s in arb_state(2)) {
            let sv = schmidt(&s, &Bipartition::new(&[0], 2).unwrap()).unwrap();
            for keep in [[0usize], [1usize]] {
                let rho = reduced(&s, &keep);
                let mut eig: Vec<f64> = SymmetricEigen::new(rho).eigenvalues.iter().copied().collect();
                eig.sort_by(|a, b| b.total_cmp(a));
                for (x, y) in sv.coefficients().iter().zip(&eig) {
                    prop_assert!((x - y).abs() < 1e-10);
                }
            }
        }

        #[test]
        fn schmidt_invariant_under_relabeling_within_a_side(s in arb_state(4)) {
            let a = schmidt(&s, &Bipartition::new(&[0, 2], 4).unwrap()).unwrap();
            let b = schmidt(&s, &Bipartition::new(&[2, 0], 4).unwrap()).unwrap();
            for (x, y) in a.coefficients().iter().zip(b.coefficients()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn operators_keep_normalization(s in arb_state(3), q in 0usize..3, t in 0.0f64..1.0) {
            let (_, out) = apply_operator(&s, &pauli::diag(t, 1.0), q).unwrap();
            let n: f64 = out.amplitudes().iter().map(|a| a.norm_sqr()).sum();
            prop_assert!((n - 1.0).abs() < EXACT_TOL);
        }
    }
}
