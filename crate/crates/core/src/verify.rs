//! Oracle checks shared by the command-line `verify` command and the test
//! suites: every closed form is compared against brute-force statevectors.

use serde::Serialize;

use crate::lattice::{build_honeycomb_with, ghz_transform, plan_cat_region, Boundary};
use crate::locc::{self, GghzState, PairState};
use crate::qstate::{self, apply_operator, bell_basis, project, x_basis, PureState};
use crate::swap::{self, average_scp, deviation, fuse_ghz_pair, ghz_swap, ghz_swap_oracle, remove_qubit_x};

/// Tolerance for exact identities.
pub const EXACT: f64 = 1e-12;
/// Tolerance for the threshold value of φ₁.
pub const THRESHOLD_TOL: f64 = 1e-4;
/// The decimal threshold value checked against the closed form.
pub const THRESHOLD_PHI1: f64 = 0.32635;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed error.
    pub value: f64,
    pub tolerance: f64,
}

impl Check {
    fn new(name: &'static str, value: f64, tolerance: f64) -> Self {
        Self {
            name,
            passed: value <= tolerance,
            value,
            tolerance,
        }
    }
}

/// `φ₁ ∈ {0.05, 0.10, …, 0.50}`.
pub fn phi1_grid() -> Vec<f64> {
    (1..=10).map(|k| k as f64 * 0.05).collect()
}

fn pair(phi1: f64) -> PairState {
    PairState::from_phi1(phi1).expect("grid value")
}

/// Largest probability or amplitude deviation between the closed-form
/// swap table and the six-qubit statevector, and the same for Bell swapping.
pub fn swap_oracle() -> Vec<Check> {
    let (mut ghz, mut bell) = (0.0f64, 0.0f64);
    for phi1 in phi1_grid() {
        let d = ghz_swap_oracle(pair(phi1)).and_then(|o| deviation(&ghz_swap(pair(phi1)), &o));
        ghz = ghz.max(d.map_or(f64::INFINITY, |d| d.max()));
        let d = swap::bell_swap_oracle(pair(phi1)).and_then(|o| deviation(&swap::bell_swap(pair(phi1)), &o));
        bell = bell.max(d.map_or(f64::INFINITY, |d| d.max()));
    }
    vec![
        Check::new("ghz swap table vs statevector", ghz, EXACT),
        Check::new("bell swap table vs statevector", bell, EXACT),
    ]
}

/// Outcome probabilities sum to one.
pub fn completeness() -> Check {
    let worst = phi1_grid()
        .into_iter()
        .map(|phi1| (ghz_swap(pair(phi1)).total_probability() - 1.0).abs())
        .fold(0.0, f64::max);
    Check::new("swap probabilities sum to 1", worst, EXACT)
}

/// The closed-form average conversion probability against the weighted
/// sum of per-outcome conversion probabilities, and its two anchor values.
pub fn average_scp_identity() -> Vec<Check> {
    let mut worst = 0.0f64;
    for phi1 in phi1_grid() {
        let table = ghz_swap(pair(phi1));
        let weighted: f64 = table
            .outcomes
            .iter()
            .map(|o| {
                let vidal = o.state.map_or(0.0, |s| {
                    locc::max_conversion_probability(&s.schmidt_vector(), &qstate::SchmidtVector::uniform(2))
                });
                o.probability * vidal
            })
            .sum();
        worst = worst.max((weighted - average_scp(pair(phi1))).abs());
        worst = worst.max((table.weighted_scp() - table.average_scp).abs());
    }
    vec![
        Check::new("average scp equals weighted outcome scp", worst, EXACT),
        Check::new("average scp at phi1 = 0.5 is 1", (average_scp(pair(0.5)) - 1.0).abs(), EXACT),
        Check::new(
            "average scp at phi1 = 0.32635 is 1/2",
            (average_scp(pair(THRESHOLD_PHI1)) - 0.5).abs(),
            THRESHOLD_TOL,
        ),
    ]
}

/// Kraus completeness, and exact GHZ output with probability `2φ₁` for
/// `m = 2..=5`.
pub fn distillation() -> Vec<Check> {
    let (mut complete, mut branch) = (0.0f64, 0.0f64);
    for phi1 in phi1_grid() {
        let p = pair(phi1);
        let (m1, m2) = match locc::gghz_distillation_operators(p.phi0(), p.phi1()) {
            Ok(ops) => ops,
            Err(_) => return vec![Check::new("distillation operators", f64::INFINITY, EXACT)],
        };
        let sum = m1.adjoint() * m1 + m2.adjoint() * m2;
        complete = complete.max((sum - nalgebra::Matrix2::identity()).iter().map(|z| z.norm()).fold(0.0, f64::max));
        for m in 2..=5 {
            let g = GghzState::generalized(m, p).expect("m >= 2");
            let psi = g.to_pure_state().expect("small");
            let (q, op, _) = locc::distillation_measurement(&g).expect("valid");
            let (prob, out) = apply_operator(&psi, &op, q).expect("in range");
            let cat = PureState::cat(m).expect("m >= 2");
            branch = branch
                .max((prob - 2.0 * phi1).abs())
                .max(1.0 - out.fidelity(&cat).expect("same size"));
        }
    }
    vec![
        Check::new("distillation operators are complete", complete, EXACT),
        Check::new("distillation yields GHZ with probability 2 phi1", branch, EXACT),
    ]
}

/// Fusion of two triangles over all Bell outcomes, and σx reduction chains
/// from `m ≤ 6` down to a Bell pair over all outcome strings. Reports the
/// worst infidelity.
pub fn fusion_and_reduction() -> Vec<Check> {
    let g = GghzState::cat(3).expect("3 qubits");
    let cat4 = PureState::cat(4).expect("4 qubits");
    let psi = qstate::tensor(&[g.to_pure_state().expect("small"), g.to_pure_state().expect("small")]).expect("6 qubits");
    let mut fusion = 0.0f64;
    for outcome in 0..4 {
        let worst = (|| {
            let f = fuse_ghz_pair(&g, &g, outcome).ok()?;
            let branch = project(&psi, &bell_basis(), &[2, 3]).ok()?.swap_remove(outcome);
            let fixed = f.correction.apply(branch.state.as_ref()?).ok()?;
            let p_err = (branch.probability - f.probability).abs();
            Some((1.0 - fixed.fidelity(&cat4).ok()?).max(p_err))
        })();
        fusion = fusion.max(worst.unwrap_or(f64::INFINITY));
    }

    let bell = PureState::cat(2).expect("2 qubits");
    let mut reduction = 0.0f64;
    for m in 3..=6usize {
        let steps = m - 2;
        for outcomes in 0..(1u32 << steps) {
            let worst = (|| {
                let mut cat = GghzState::cat(m).ok()?;
                let mut psi = cat.to_pure_state().ok()?;
                for step in 0..steps {
                    let o: i8 = if outcomes >> step & 1 == 0 { 1 } else { -1 };
                    let q = cat.num_qubits() / 2;
                    let r = remove_qubit_x(&cat, q, o).ok()?;
                    let branch = project(&psi, &x_basis(), &[q]).ok()?.swap_remove((o < 0) as usize);
                    psi = r.correction.apply(branch.state.as_ref()?).ok()?;
                    cat = r.state;
                }
                Some(1.0 - psi.fidelity(&bell).ok()?)
            })();
            reduction = reduction.max(worst.unwrap_or(f64::INFINITY));
        }
    }
    vec![
        Check::new("triangle fusion gives a 4-qubit cat on every outcome", fusion, EXACT),
        Check::new("sigma-x chains reach a Bell pair on every outcome", reduction, EXACT),
    ]
}

/// Executes every planned cat state on up to three adjacent occupied
/// triangles (at most 9 qubits) over all outcome branches.
pub fn small_plans() -> Check {
    let p = pair(0.5);
    let h = build_honeycomb_with(4, 4, p, Boundary::Wrapping).expect("valid size");
    let base = ghz_transform(&h);
    let mut worst = 0.0f64;
    let mut cases = 0;
    let b = 0u32;
    let around = base.neighbors(b as usize);
    for (i, &a) in around.iter().enumerate() {
        for &c in around[i + 1..].iter().chain(std::iter::once(&b)) {
            let mut t = base.clone();
            let mut occ = vec![false; t.len()];
            for x in [a, b, c] {
                occ[x as usize] = true;
            }
            t.set_occupied(occ);
            let tri = |x: u32| t.triangles()[x as usize].corners.map(|k| k.node);
            let targets: Vec<u32> = {
                let mut v: Vec<u32> = [a, c].iter().flat_map(|&x| tri(x)).collect();
                v.sort_unstable();
                v.dedup();
                v.retain(|n| !tri(b).contains(n));
                v.truncate(3);
                v
            };
            let plan = match plan_cat_region(&t, &targets) {
                Ok(plan) if plan.num_qubits() <= 9 => plan,
                _ => continue,
            };
            let cat = match PureState::cat(plan.targets.len()) {
                Ok(c) => c,
                Err(_) => continue,
            };
            let (nf, nr) = (plan.fusions.len(), plan.removals.len());
            let mut total = 0.0;
            for code in 0..(4usize.pow(nf as u32) << nr) {
                let bell: Vec<usize> = (0..nf).map(|i| (code >> (2 * i)) & 3).collect();
                let sx: Vec<i8> = (0..nr).map(|i| if (code >> (2 * nf + i)) & 1 == 0 { 1 } else { -1 }).collect();
                match plan.execute(&bell, &sx) {
                    Ok(run) => {
                        total += run.probability;
                        worst = worst.max(1.0 - run.state.fidelity(&cat).unwrap_or(0.0));
                    }
                    Err(_) => worst = f64::INFINITY,
                }
            }
            worst = worst.max((total - 1.0).abs());
            cases += 1;
        }
    }
    if cases == 0 {
        worst = f64::INFINITY;
    }
    Check::new("planned cat states on <= 9 qubits", worst, EXACT)
}

/// Every oracle check.
pub fn run_all() -> Vec<Check> {
    let mut checks = swap_oracle();
    checks.push(completeness());
    checks.extend(average_scp_identity());
    checks.extend(distillation());
    checks.extend(fusion_and_reduction());
    checks.push(small_plans());
    checks.push(Check::new(
        "threshold phi1 closed form",
        (swap::threshold_phi1() - (0.5 - (std::f64::consts::PI / 18.0).sin())).abs(),
        EXACT,
    ));
    checks
}
