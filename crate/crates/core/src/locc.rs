//! Closed-form LOCC conversion calculus.
//!
//! All Schmidt data here is stored as squared coefficients (probabilities).
//! [`majorizes`] decides deterministic convertibility; [`max_conversion_probability`]
//! gives the optimal single-copy conversion probability; [`scp`] specialises it
//! to the singlet target. [`GghzState`] describes the two-term states
//! `a|x⟩ ± b|x̄⟩` produced by GHZ-basis swapping, and [`distill_gghz`] turns
//! them into balanced GHZ states with probability `2b²`.

use nalgebra::Matrix2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qstate::{self, pauli, Pauli, PauliFrame, PureState, SchmidtVector, StateError};

const TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LoccError {
    #[error("invalid pair state: {0}")]
    BadPair(String),
    #[error("invalid generalized GHZ state: {0}")]
    BadGhz(String),
    #[error("distillation requires phi0 >= phi1 >= 0, got phi0={phi0}, phi1={phi1}")]
    BadRatio { phi0: f64, phi1: f64 },
    #[error(transparent)]
    State(#[from] StateError),
}

pub type Result<T> = std::result::Result<T, LoccError>;

/// Squared Schmidt coefficients `(φ₀, φ₁)` of `√φ₀|00⟩ + √φ₁|11⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairState {
    phi0: f64,
    phi1: f64,
}

impl PairState {
    pub fn new(phi0: f64, phi1: f64) -> Result<Self> {
        if !(phi0.is_finite() && phi1.is_finite()) {
            return Err(LoccError::BadPair("non-finite coefficient".into()));
        }
        if (phi0 + phi1 - 1.0).abs() > TOL {
            return Err(LoccError::BadPair(format!("phi0 + phi1 = {}", phi0 + phi1)));
        }
        if phi1 < 0.0 || phi0 < phi1 || phi0 <= 0.0 {
            return Err(LoccError::BadPair(format!(
                "need phi0 >= phi1 >= 0, got ({phi0}, {phi1})"
            )));
        }
        Ok(Self { phi0, phi1 })
    }

    /// Pair with smaller coefficient `phi1 ∈ [0, 1/2]`.
    pub fn from_phi1(phi1: f64) -> Result<Self> {
        if !(0.0..=0.5).contains(&phi1) {
            return Err(LoccError::BadPair(format!("phi1 = {phi1} outside [0, 0.5]")));
        }
        Self::new(1.0 - phi1, phi1)
    }

    /// `cos θ|00⟩ + sin θ|11⟩` with `θ ∈ [0, π/4]`.
    pub fn from_angle(theta: f64) -> Result<Self> {
        if !(0.0..=std::f64::consts::FRAC_PI_4 + TOL).contains(&theta) {
            return Err(LoccError::BadPair(format!("angle {theta} outside [0, π/4]")));
        }
        let (s, c) = theta.sin_cos();
        Self::new(c * c, s * s)
    }

    pub fn phi0(&self) -> f64 {
        self.phi0
    }

    pub fn phi1(&self) -> f64 {
        self.phi1
    }

    pub fn schmidt_vector(&self) -> SchmidtVector {
        SchmidtVector::new(vec![self.phi0, self.phi1]).expect("validated on construction")
    }

    pub fn to_pure_state(&self) -> PureState {
        PureState::from_real(&[self.phi0.sqrt(), 0.0, 0.0, self.phi1.sqrt()])
            .expect("validated on construction")
    }
}

/// `amp_big|bits_a⟩ + sign·amp_small|bits_b⟩` on `m` qubits, with `bits_b`
/// the complement of `bits_a`. Bit strings are big-endian basis indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GghzState {
    m: usize,
    amp_big: f64,
    amp_small: f64,
    bits_a: u64,
    sign: i8,
}

impl GghzState {
    /// Builds `amp_a|bits_a⟩ + sign·amp_b|complement⟩`, normalizing the two
    /// amplitudes and reordering so the larger one comes first.
    pub fn new(m: usize, amp_a: f64, bits_a: u64, amp_b: f64, sign: i8) -> Result<Self> {
        if !(1..=64).contains(&m) {
            return Err(LoccError::BadGhz(format!("qubit count {m} outside 1..=64")));
        }
        if sign != 1 && sign != -1 {
            return Err(LoccError::BadGhz(format!("sign {sign}")));
        }
        if amp_a < 0.0 || amp_b < 0.0 || !amp_a.is_finite() || !amp_b.is_finite() {
            return Err(LoccError::BadGhz("amplitudes must be non-negative".into()));
        }
        let norm = amp_a.hypot(amp_b);
        if norm == 0.0 {
            return Err(LoccError::BadGhz("zero state".into()));
        }
        let mask = mask(m);
        if bits_a & !mask != 0 {
            return Err(LoccError::BadGhz(format!("bit string {bits_a:#b} wider than {m}")));
        }
        let (big, small, bits) = if amp_b > amp_a {
            (amp_b, amp_a, !bits_a & mask)
        } else {
            (amp_a, amp_b, bits_a)
        };
        Ok(Self {
            m,
            amp_big: big / norm,
            amp_small: small / norm,
            bits_a: bits,
            sign,
        })
    }

    /// `√φ₀|0…0⟩ + √φ₁|1…1⟩`.
    pub fn generalized(m: usize, pair: PairState) -> Result<Self> {
        Self::new(m, pair.phi0.sqrt(), 0, pair.phi1.sqrt(), 1)
    }

    /// The canonical cat state `(|0…0⟩ + |1…1⟩)/√2`.
    pub fn cat(m: usize) -> Result<Self> {
        Self::new(m, 1.0, 0, 1.0, 1)
    }

    /// The product state `|bits⟩`.
    pub fn product(m: usize, bits: u64) -> Result<Self> {
        Self::new(m, 1.0, bits, 0.0, 1)
    }

    /// Reads a two-term descriptor off a statevector, if it is one (up to a
    /// global phase).
    pub fn from_pure_state(state: &PureState, tol: f64) -> Option<Self> {
        let m = state.num_qubits();
        let support = state.support(tol);
        match support.as_slice() {
            [(i, _)] => Self::product(m, *i as u64).ok(),
            [(i, a), (j, b)] => {
                if (*i as u64) ^ (*j as u64) != mask(m) {
                    return None;
                }
                let rel = b / a;
                if rel.im.abs() > tol * rel.norm().max(1.0) {
                    return None;
                }
                let sign = if rel.re >= 0.0 { 1 } else { -1 };
                Self::new(m, a.norm(), *i as u64, b.norm(), sign).ok()
            }
            _ => None,
        }
    }

    pub fn num_qubits(&self) -> usize {
        self.m
    }

    pub fn amp_big(&self) -> f64 {
        self.amp_big
    }

    pub fn amp_small(&self) -> f64 {
        self.amp_small
    }

    pub fn bits_a(&self) -> u64 {
        self.bits_a
    }

    pub fn bits_b(&self) -> u64 {
        !self.bits_a & mask(self.m)
    }

    pub fn sign(&self) -> i8 {
        self.sign
    }

    /// Value of `qubit` in the dominant bit string.
    pub fn bit(&self, qubit: usize) -> bool {
        (self.bits_a >> (self.m - 1 - qubit)) & 1 == 1
    }

    pub fn is_balanced(&self) -> bool {
        (self.amp_big - self.amp_small).abs() <= TOL
    }

    pub fn is_product(&self) -> bool {
        self.amp_small <= TOL
    }

    /// Balanced, on `|0…0⟩`/`|1…1⟩`, with a `+` sign.
    pub fn is_canonical_cat(&self) -> bool {
        self.is_balanced()
            && self.sign == 1
            && (self.bits_a == 0 || self.bits_a == mask(self.m))
    }

    /// Squared Schmidt coefficients across any non-trivial bipartition.
    pub fn schmidt_vector(&self) -> SchmidtVector {
        SchmidtVector::new(vec![self.amp_big.powi(2), self.amp_small.powi(2)])
            .expect("amplitudes normalized on construction")
    }

    pub fn to_pure_state(&self) -> Result<PureState> {
        if self.m > qstate::MAX_QUBITS {
            return Err(StateError::TooManyQubits {
                requested: self.m,
                cap: qstate::MAX_QUBITS,
            }
            .into());
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << self.m];
        amps[self.bits_a as usize] += Complex64::new(self.amp_big, 0.0);
        amps[self.bits_b() as usize] += Complex64::new(self.sign as f64 * self.amp_small, 0.0);
        Ok(PureState::normalized(amps)?)
    }

    /// Descriptor-level action of a Pauli frame (global phases dropped).
    pub fn apply_frame(&self, frame: &PauliFrame) -> Self {
        let mut out = *self;
        for &(q, op) in &frame.ops {
            match op {
                Pauli::X => out.bits_a ^= 1 << (self.m - 1 - q),
                // Exactly one of the two strings has a 1 at q.
                Pauli::Z => {
                    if !out.is_product() {
                        out.sign = -out.sign
                    }
                }
            }
        }
        out
    }

    /// Local Paulis taking a balanced state to the canonical cat: `X` on every
    /// qubit set in the dominant string, then `Z` on qubit 0 if the relative
    /// sign is negative.
    pub fn canonicalizing_frame(&self) -> PauliFrame {
        let mut frame = PauliFrame::new();
        for q in 0..self.m {
            if self.bit(q) {
                frame.push(q, Pauli::X);
            }
        }
        if self.sign == -1 {
            frame.push(0, Pauli::Z);
        }
        frame
    }
}

fn mask(m: usize) -> u64 {
    if m >= 64 {
        u64::MAX
    } else {
        (1u64 << m) - 1
    }
}

/// Nielsen's criterion: `source` converts to `target` deterministically iff
/// every partial sum of `source` is at most the matching partial sum of
/// `target`.
pub fn majorizes(source: &SchmidtVector, target: &SchmidtVector) -> bool {
    let n = source.len().max(target.len());
    let (s, t) = (source.padded(n), target.padded(n));
    let (mut ps, mut pt) = (0.0, 0.0);
    for k in 0..n {
        ps += s[k];
        pt += t[k];
        if ps > pt + TOL {
            return false;
        }
    }
    true
}

/// Optimal probability of converting `source` into `target` with a single
/// copy: the minimum over `l` of the ratio of tail sums from `l` onward.
///
/// Indices where the target tail vanishes are skipped. If the target has
/// larger Schmidt rank the result is zero.
pub fn max_conversion_probability(source: &SchmidtVector, target: &SchmidtVector) -> f64 {
    let n = source.len().max(target.len());
    let (s, t) = (source.padded(n), target.padded(n));
    let mut best = 1.0f64;
    let (mut tail_s, mut tail_t) = (0.0, 0.0);
    for l in (0..n).rev() {
        tail_s += s[l];
        tail_t += t[l];
        if tail_t <= 0.0 {
            continue;
        }
        best = best.min(tail_s / tail_t);
    }
    best.clamp(0.0, 1.0)
}

/// Singlet conversion probability `2φ₁`.
pub fn scp(pair: PairState) -> f64 {
    2.0 * pair.phi1
}

/// Kraus pair `M₁ = diag(√(φ₁/φ₀), 1)`, `M₂ = diag(√(1 − φ₁/φ₀), 0)`.
pub fn gghz_distillation_operators(
    phi0: f64,
    phi1: f64,
) -> Result<(Matrix2<Complex64>, Matrix2<Complex64>)> {
    if !(phi0 > 0.0 && phi1 >= 0.0 && phi1 <= phi0) {
        return Err(LoccError::BadRatio { phi0, phi1 });
    }
    let r = phi1 / phi0;
    Ok((pauli::diag(r.sqrt(), 1.0), pauli::diag((1.0 - r).sqrt(), 0.0)))
}

/// The qubit and Kraus pair that distill `state`.
///
/// Qubit 0 is measured; the operators are mirrored when the dominant term
/// holds `|1⟩` on that qubit.
pub fn distillation_measurement(
    state: &GghzState,
) -> Result<(usize, Matrix2<Complex64>, Matrix2<Complex64>)> {
    let (m1, m2) = gghz_distillation_operators(state.amp_big.powi(2), state.amp_small.powi(2))?;
    if state.bit(0) {
        let x = pauli::x();
        Ok((0, x * m1 * x, x * m2 * x))
    } else {
        Ok((0, m1, m2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distilled {
    /// Balanced state on the same bit strings with the same sign.
    Ghz(GghzState),
    /// The failure branch collapses onto the dominant product term.
    Product(GghzState),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distillation {
    pub success_probability: f64,
    pub outcome: Distilled,
}

/// Runs the distillation measurement against an externally supplied uniform
/// draw in `[0, 1)`. Succeeds iff `draw < 2·amp_small²`.
pub fn distill_gghz(state: &GghzState, draw: f64) -> Distillation {
    let success_probability = (2.0 * state.amp_small * state.amp_small).min(1.0);
    let outcome = if state.is_balanced() {
        Distilled::Ghz(*state)
    } else if draw < success_probability {
        Distilled::Ghz(GghzState {
            amp_big: std::f64::consts::FRAC_1_SQRT_2,
            amp_small: std::f64::consts::FRAC_1_SQRT_2,
            ..*state
        })
    } else {
        Distilled::Product(GghzState {
            amp_big: 1.0,
            amp_small: 0.0,
            sign: 1,
            ..*state
        })
    };
    Distillation {
        success_probability,
        outcome,
    }
}
