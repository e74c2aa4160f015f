//! GHZ-basis entanglement swapping at a honeycomb node, the two-qubit Bell
//! swap baseline, and the fusion/reduction steps that turn GHZ triangles into
//! cat states and Bell pairs.
//!
//! Every closed form here has a statevector counterpart built on
//! [`crate::qstate`]; the `*_oracle` functions are those counterparts.

use serde::Serialize;
use thiserror::Error;

use crate::locc::{self, GghzState, LoccError, PairState};
use crate::qstate::{self, Pauli, PauliFrame, PureState, SchmidtVector, StateError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SwapError {
    #[error("fusion needs balanced GHZ-class inputs; distill first")]
    Unbalanced,
    #[error("Bell outcome {0} outside 0..=3")]
    BadOutcome(usize),
    #[error("σx outcome must be +1 or -1, got {0}")]
    BadSign(i8),
    #[error("cannot remove a qubit from a {0}-qubit state (need at least 3)")]
    TooSmall(usize),
    #[error("qubit {qubit} out of range for {m} qubits")]
    QubitOutOfRange { qubit: usize, m: usize },
    #[error("oracle branch is not a two-term GHZ-class state")]
    NotGhzClass,
    #[error(transparent)]
    Locc(#[from] LoccError),
    #[error(transparent)]
    State(#[from] StateError),
}

pub type Result<T> = std::result::Result<T, SwapError>;

/// One row of a swap outcome table.
#[derive(Debug, Clone, Serialize)]
pub struct SwapOutcome {
    pub label: String,
    pub probability: f64,
    /// Post-measurement state of the outer qubits; `None` for branches that
    /// cannot occur.
    pub state: Option<GghzState>,
    /// Optimal probability of converting this outcome to a Bell/GHZ state.
    pub scp: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SwapOutcomeTable {
    pub outcomes: Vec<SwapOutcome>,
    pub average_scp: f64,
}

impl SwapOutcomeTable {
    pub fn total_probability(&self) -> f64 {
        self.outcomes.iter().map(|o| o.probability).sum()
    }

    /// `Σᵢ pᵢ · scpᵢ`, computed from the rows rather than the closed form.
    pub fn weighted_scp(&self) -> f64 {
        self.outcomes.iter().map(|o| o.probability * o.scp).sum()
    }
}

fn outcome_scp(state: &GghzState) -> f64 {
    locc::max_conversion_probability(&state.schmidt_vector(), &SchmidtVector::uniform(2))
}

fn row(label: String, probability: f64, state: Option<GghzState>) -> SwapOutcome {
    let scp = state.as_ref().map_or(0.0, outcome_scp);
    SwapOutcome {
        label,
        probability,
        state,
        scp,
    }
}

/// Node-qubit patterns of the GHZ basis, in listing order; each pattern is
/// paired with its complement under `+` then `−`.
pub const GHZ_PATTERNS: [u64; 4] = [0b000, 0b001, 0b010, 0b011];

fn ghz_label(pattern: u64, sign: i8) -> String {
    format!(
        "{:03b}{}{:03b}",
        pattern,
        if sign > 0 { '+' } else { '-' },
        !pattern & 0b111
    )
}

/// The eight three-qubit GHZ-basis states.
pub fn ghz_basis() -> Vec<PureState> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = Vec::with_capacity(8);
    for &pattern in &GHZ_PATTERNS {
        for sign in [1.0, -1.0] {
            let mut v = [0.0; 8];
            v[pattern as usize] = s;
            v[(!pattern & 0b111) as usize] = sign * s;
            out.push(PureState::from_real(&v).expect("normalized"));
        }
    }
    out
}

/// Average singlet conversion probability after GHZ-basis swapping,
/// `2φ₁²(φ₁ + 3φ₀)`.
pub fn average_scp(pair: PairState) -> f64 {
    let (p0, p1) = (pair.phi0(), pair.phi1());
    2.0 * p1 * p1 * (p1 + 3.0 * p0)
}

/// The `φ₁` at which [`average_scp`] reaches 1/2: `1/2 − sin(π/18)`.
pub fn threshold_phi1() -> f64 {
    0.5 - (std::f64::consts::PI / 18.0).sin()
}

/// Inverts [`average_scp`] on `[0, 1/2]` by bisection.
pub fn phi1_for_average_scp(target: f64) -> f64 {
    let f = |phi1: f64| average_scp(PairState::from_phi1(phi1).expect("in range")) - target;
    let (mut lo, mut hi) = (0.0f64, 0.5f64);
    if f(lo) >= 0.0 {
        return lo;
    }
    if f(hi) <= 0.0 {
        return hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-16 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Closed-form GHZ-basis swap of three identical pairs meeting at a node.
pub fn ghz_swap(pair: PairState) -> SwapOutcomeTable {
    let (p0, p1) = (pair.phi0(), pair.phi1());
    if p1 == 0.0 {
        let state = GghzState::product(3, 0).expect("valid");
        return SwapOutcomeTable {
            outcomes: vec![row("000".into(), 1.0, Some(state))],
            average_scp: 0.0,
        };
    }
    let (s0, s1) = (p0.sqrt(), p1.sqrt());
    // Amplitudes on |pattern⟩ and on its complement.
    let amps = [
        (p0 * s0, p1 * s1),
        (p0 * s1, p1 * s0),
        (p0 * s1, p1 * s0),
        (p1 * s0, p0 * s1),
    ];
    let p_equal = (p0.powi(3) + p1.powi(3)) / 2.0;
    let p_mixed = (p0 * p0 * p1 + p1 * p1 * p0) / 2.0;
    let mut outcomes = Vec::with_capacity(8);
    for (i, (&pattern, &(a, b))) in GHZ_PATTERNS.iter().zip(&amps).enumerate() {
        let probability = if i == 0 { p_equal } else { p_mixed };
        for sign in [1i8, -1] {
            let state = GghzState::new(3, a, pattern, b, sign).expect("valid amplitudes");
            outcomes.push(row(ghz_label(pattern, sign), probability, Some(state)));
        }
    }
    SwapOutcomeTable {
        outcomes,
        average_scp: average_scp(pair),
    }
}

/// Raw statevector branches behind an oracle table.
#[derive(Debug, Clone)]
pub struct OracleTable {
    pub branches: Vec<qstate::Branch>,
    pub table: SwapOutcomeTable,
}

fn table_from_branches(
    branches: &[qstate::Branch],
    labels: Vec<String>,
) -> Result<SwapOutcomeTable> {
    let mut outcomes = Vec::with_capacity(branches.len());
    for (branch, label) in branches.iter().zip(labels) {
        let state = match &branch.state {
            Some(psi) => Some(GghzState::from_pure_state(psi, 1e-14).ok_or(SwapError::NotGhzClass)?),
            None => None,
        };
        outcomes.push(row(label, branch.probability, state));
    }
    let mut table = SwapOutcomeTable {
        outcomes,
        average_scp: 0.0,
    };
    table.average_scp = table.weighted_scp();
    Ok(table)
}

/// Six-qubit statevector route for [`ghz_swap`].
///
/// Layout: pairs (A₁–A₂q₁), (A₃–A₂q₂), (A₄–A₂q₃) tensored in that order,
/// so the node qubits are 1, 3, 5 and the residual is on (A₁, A₃, A₄).
pub fn ghz_swap_oracle(pair: PairState) -> Result<OracleTable> {
    let edge = pair.to_pure_state();
    let lambda = qstate::tensor(&[edge.clone(), edge.clone(), edge])?;
    let branches = qstate::project(&lambda, &ghz_basis(), &[1, 3, 5])?;
    let labels = GHZ_PATTERNS
        .iter()
        .flat_map(|&p| [ghz_label(p, 1), ghz_label(p, -1)])
        .collect();
    let table = table_from_branches(&branches, labels)?;
    Ok(OracleTable { branches, table })
}

const BELL_LABELS: [&str; 4] = ["phi+", "phi-", "psi+", "psi-"];

/// Closed-form Bell-basis swap of two identical pairs.
pub fn bell_swap(pair: PairState) -> SwapOutcomeTable {
    let (p0, p1) = (pair.phi0(), pair.phi1());
    let p_phi = (p0 * p0 + p1 * p1) / 2.0;
    let p_psi = p0 * p1;
    let mut outcomes = Vec::with_capacity(4);
    for (i, sign) in [1i8, -1].into_iter().enumerate() {
        let state = GghzState::new(2, p0, 0b00, p1, sign).expect("valid");
        outcomes.push(row(BELL_LABELS[i].into(), p_phi, Some(state)));
    }
    for (i, sign) in [1i8, -1].into_iter().enumerate() {
        let state = (p_psi > 0.0).then(|| GghzState::new(2, 1.0, 0b01, 1.0, sign).expect("valid"));
        outcomes.push(row(BELL_LABELS[2 + i].into(), p_psi, state));
    }
    let mut table = SwapOutcomeTable {
        outcomes,
        average_scp: 0.0,
    };
    table.average_scp = table.weighted_scp();
    table
}

/// Four-qubit statevector route for [`bell_swap`]: pairs (A–B₁), (B₂–C),
/// Bell measurement on (B₁, B₂), residual on (A, C).
pub fn bell_swap_oracle(pair: PairState) -> Result<OracleTable> {
    let edge = pair.to_pure_state();
    let lambda = qstate::tensor(&[edge.clone(), edge])?;
    let branches = qstate::project(&lambda, &qstate::bell_basis(), &[1, 2])?;
    let table = table_from_branches(&branches, BELL_LABELS.iter().map(|s| s.to_string()).collect())?;
    Ok(OracleTable { branches, table })
}

/// Largest disagreement between a closed-form table and its oracle.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Deviation {
    pub probability: f64,
    pub amplitude: f64,
}

impl Deviation {
    pub fn max(&self) -> f64 {
        self.probability.max(self.amplitude)
    }
}

pub fn deviation(closed: &SwapOutcomeTable, oracle: &OracleTable) -> Result<Deviation> {
    let mut dev = Deviation::default();
    if closed.outcomes.len() != oracle.branches.len() {
        return Err(SwapError::NotGhzClass);
    }
    for (row, branch) in closed.outcomes.iter().zip(&oracle.branches) {
        dev.probability = dev.probability.max((row.probability - branch.probability).abs());
        match (&row.state, &branch.state) {
            (Some(s), Some(psi)) => {
                let amp = s.to_pure_state()?.max_amplitude_deviation(psi)?;
                dev.amplitude = dev.amplitude.max(amp);
            }
            (None, None) => {}
            _ if row.probability.abs() < 1e-12 && branch.probability.abs() < 1e-12 => {}
            _ => dev.amplitude = f64::INFINITY,
        }
    }
    Ok(dev)
}

/// Pauli correction for a Bell-fusion outcome, in the order Φ⁺, Φ⁻, Ψ⁺, Ψ⁻.
///
/// For canonical cat inputs, a Ψ outcome leaves the second cat's qubits
/// bit-flipped and a `−` outcome leaves a relative phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionCorrection {
    pub flip_second: bool,
    pub phase: bool,
}

pub const FUSION_CORRECTIONS: [FusionCorrection; 4] = [
    FusionCorrection { flip_second: false, phase: false },
    FusionCorrection { flip_second: false, phase: true },
    FusionCorrection { flip_second: true, phase: false },
    FusionCorrection { flip_second: true, phase: true },
];

impl FusionCorrection {
    /// Frame on the fused register: the first cat contributes qubits
    /// `0..first_len`, the second the remaining `second_len`.
    pub fn frame(&self, first_len: usize, second_len: usize) -> PauliFrame {
        let mut frame = PauliFrame::new();
        if self.flip_second {
            for q in first_len..first_len + second_len {
                frame.push(q, Pauli::X);
            }
        }
        if self.phase {
            frame.push(0, Pauli::Z);
        }
        frame
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionResult {
    pub probability: f64,
    /// State straight after the Bell measurement.
    pub raw: GghzState,
    pub correction: PauliFrame,
    /// State after the correction.
    pub state: GghzState,
}

fn drop_bit(bits: u64, m: usize, qubit: usize) -> u64 {
    let pos = m - 1 - qubit;
    let low = bits & ((1u64 << pos) - 1);
    let high = bits >> (pos + 1);
    (high << pos) | low
}

/// Fuses two balanced GHZ-class states with a Bell measurement on the last
/// qubit of `a` and the first qubit of `b`, then applies the fixed
/// correction for `outcome`. The result holds `a`'s remaining qubits
/// followed by `b`'s.
pub fn fuse_ghz_pair(a: &GghzState, b: &GghzState, outcome: usize) -> Result<FusionResult> {
    if outcome > 3 {
        return Err(SwapError::BadOutcome(outcome));
    }
    if !a.is_balanced() || !b.is_balanced() {
        return Err(SwapError::Unbalanced);
    }
    let (ma, mb) = (a.num_qubits(), b.num_qubits());
    if ma < 2 || mb < 2 {
        return Err(SwapError::TooSmall(ma.min(mb)));
    }
    let parity = (outcome >> 1) as u64;
    let t: i8 = if outcome & 1 == 0 { 1 } else { -1 };
    let u = a.bits_a() & 1;
    let v = b.bits_a() >> (mb - 1);
    let x = a.bits_a() >> 1;
    let y_mask = (1u64 << (mb - 1)) - 1;
    let mut y = b.bits_a() & y_mask;
    if u ^ v != parity {
        y = !y & y_mask;
    }
    let bits = (x << (mb - 1)) | y;
    let sign = a.sign() * b.sign() * t;
    let raw = GghzState::new(ma + mb - 2, 1.0, bits, 1.0, sign)?;
    let correction = FUSION_CORRECTIONS[outcome].frame(ma - 1, mb - 1);
    let state = raw.apply_frame(&correction);
    Ok(FusionResult {
        probability: 0.25,
        raw,
        correction,
        state,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct XRemoval {
    pub probability: f64,
    pub raw: GghzState,
    pub correction: PauliFrame,
    pub state: GghzState,
}

/// Measures `qubit` in the σx basis and applies a `Z` on the new qubit 0
/// for the `−1` outcome. The remaining `m − 1` qubits keep their order.
pub fn remove_qubit_x(state: &GghzState, qubit: usize, outcome: i8) -> Result<XRemoval> {
    let m = state.num_qubits();
    if outcome != 1 && outcome != -1 {
        return Err(SwapError::BadSign(outcome));
    }
    if m < 3 {
        return Err(SwapError::TooSmall(m));
    }
    if qubit >= m {
        return Err(SwapError::QubitOutOfRange { qubit, m });
    }
    let bits = drop_bit(state.bits_a(), m, qubit);
    let raw = GghzState::new(
        m - 1,
        state.amp_big(),
        bits,
        state.amp_small(),
        state.sign() * outcome,
    )?;
    let mut correction = PauliFrame::new();
    if outcome == -1 {
        correction.push(0, Pauli::Z);
    }
    let corrected = raw.apply_frame(&correction);
    Ok(XRemoval {
        probability: 0.5,
        raw,
        correction,
        state: corrected,
    })
}
