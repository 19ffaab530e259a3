//! Closed-form expressions for every stage of a five-round attacked session.
//!
//! Each state is assembled term by term from its summation formula, with no
//! gate applications, so comparing these against simulated snapshots is an
//! independent cross-check of the round engine.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::Serialize;

use crate::adversary::AdversaryStrategy;
use crate::error::{Error, Result};
use crate::protocol::{run_session, ArithmeticMode, ProtocolConfig, SessionTranscript};
use crate::register::{BasisTuple, CompareMode, PureState};
use crate::ring::{Amplitude, FLOAT_TOL};

const ABE: [&str; 3] = ["a", "b", "e"];
const ABKE: [&str; 4] = ["a", "b", "k", "e"];

fn md(x: i64, d: u32) -> u32 {
    x.rem_euclid(d as i64) as u32
}

/// `d^{-s/2} Σ ζ^{phase} |tuple⟩`; repeated tuples accumulate.
fn summed<A: Amplitude>(
    dim: u32,
    wires: &[&str],
    scale_exp: u32,
    terms: impl IntoIterator<Item = (Vec<u32>, i64)>,
) -> PureState<A> {
    let mut map: BTreeMap<BasisTuple, A> = BTreeMap::new();
    for (tuple, phase) in terms {
        let z = A::root_of_unity(dim, phase);
        map.entry(BasisTuple(tuple))
            .and_modify(|a| *a = a.add(&z))
            .or_insert(z);
    }
    PureState::from_terms(dim, wires.iter().map(|w| w.to_string()).collect(), scale_exp, map)
        .expect("closed forms use valid dits")
}

/// `(1/√d) Σ_j |j, j, f(j)⟩` style states over one summation index.
fn single_sum<A: Amplitude>(dim: u32, wires: &[&str], tuple: impl Fn(i64) -> Vec<i64>) -> PureState<A> {
    summed(
        dim,
        wires,
        1,
        (0..dim as i64).map(|j| (tuple(j).into_iter().map(|v| md(v, dim)).collect(), 0)),
    )
}

/// `(1/d) Σ_{k,l} ζ^{sign·q₁(l−k)} |k, l, …⟩`.
fn double_sum<A: Amplitude>(
    dim: u32,
    wires: &[&str],
    phase_q1: i64,
    tuple: impl Fn(i64, i64) -> Vec<i64>,
) -> PureState<A> {
    let n = dim as i64;
    summed(
        dim,
        wires,
        2,
        (0..n).flat_map(|k| (0..n).map(move |l| (k, l))).map(|(k, l)| {
            (
                tuple(k, l).into_iter().map(|v| md(v, dim)).collect(),
                phase_q1 * (l - k),
            )
        }),
    )
}

/// One expected stage: where to find it in the transcript and its formula.
pub struct ExpectedStage<A> {
    pub round: usize,
    pub label: &'static str,
    pub formula: &'static str,
    pub state: PureState<A>,
}

/// The expected states of rounds 1–5 for key dits `q[0..5]`, in transcript
/// order. The round-2 opening state appears twice: once as the raw
/// four-index sum before the Fourier identity is applied, once summed.
pub fn expected_stages<A: Amplitude>(dim: u32, key: &[u32]) -> Result<Vec<ExpectedStage<A>>> {
    if key.len() < 5 {
        return Err(Error::InvalidConfig(format!(
            "closed forms need five key dits, got {}",
            key.len()
        )));
    }
    if dim < 2 {
        return Err(Error::InvalidDimension(dim));
    }
    let d = dim;
    let n = d as i64;
    let q: Vec<i64> = key.iter().map(|&v| v as i64).collect();
    let (q1, q2, q3, q4, q5) = (q[0], q[1], q[2], q[3], q[4]);

    let stage = |round, label, formula, state| ExpectedStage {
        round,
        label,
        formula,
        state,
    };

    let raw_psi20 = summed::<A>(
        d,
        &ABE,
        4,
        (0..n).flat_map(|j| {
            (0..n).flat_map(move |k| {
                (0..n).flat_map(move |l| {
                    (0..n).map(move |m| {
                        (
                            vec![k as u32, l as u32, m as u32],
                            j * k - j * l + m * (j + q1),
                        )
                    })
                })
            })
        }),
    );

    Ok(vec![
        stage(1, "psi_1_0", "Σ_j |j,j,0⟩/√d", single_sum(d, &ABE, |j| vec![j, j, 0])),
        stage(1, "Phi_0", "Σ_j |j,j,q1,0⟩/√d", single_sum(d, &ABKE, |j| vec![j, j, q1, 0])),
        stage(1, "Phi_1", "Σ_j |j,j,j+q1,0⟩/√d", single_sum(d, &ABKE, |j| vec![j, j, j + q1, 0])),
        stage(1, "Phi_2", "Σ_j |j,j,j+q1,j+q1⟩/√d", single_sum(d, &ABKE, |j| vec![j, j, j + q1, j + q1])),
        stage(1, "Phi_3", "Σ_j |j,j,q1,j+q1⟩/√d", single_sum(d, &ABKE, |j| vec![j, j, q1, j + q1])),
        stage(1, "psi_1_1", "Σ_j |j,j,j+q1⟩/√d", single_sum(d, &ABE, |j| vec![j, j, j + q1])),
        stage(
            2,
            "psi_2_0",
            "Σ_{jklm} ζ^{jk−jl+m(j+q1)} |k,l,m⟩/d²",
            raw_psi20,
        ),
        stage(2, "psi_2_0", "Σ_{kl} ζ^{q1(l−k)} |k,l,l−k⟩/d", double_sum(d, &ABE, q1, |k, l| vec![k, l, l - k])),
        stage(2, "Psi_0", "Σ_{kl} ζ^{q1(l−k)} |k,l,q2,l−k⟩/d", double_sum(d, &ABKE, q1, |k, l| vec![k, l, q2, l - k])),
        stage(2, "Psi_1", "Σ_{kl} ζ^{q1(l−k)} |k,l,k+q2,l−k⟩/d", double_sum(d, &ABKE, q1, |k, l| vec![k, l, k + q2, l - k])),
        stage(2, "Psi_2", "Σ_{kl} ζ^{q1(l−k)} |k,l,l+q2,l−k⟩/d", double_sum(d, &ABKE, q1, |k, l| vec![k, l, l + q2, l - k])),
        stage(2, "Psi_3", "Σ_{kl} ζ^{q1(l−k)} |k,l,q2,l−k⟩/d", double_sum(d, &ABKE, q1, |k, l| vec![k, l, q2, l - k])),
        stage(2, "psi_2_1", "Σ_{kl} ζ^{q1(l−k)} |k,l,l−k⟩/d", double_sum(d, &ABE, q1, |k, l| vec![k, l, l - k])),
        stage(3, "psi_3_0", "Σ_m |m,m,m−q1⟩/√d", single_sum(d, &ABE, |m| vec![m, m, m - q1])),
        stage(3, "Omega_0", "Σ_m |m,m,q3,m−q1⟩/√d", single_sum(d, &ABKE, |m| vec![m, m, q3, m - q1])),
        stage(3, "Omega_1", "Σ_m |m,m,m+q3,m−q1⟩/√d", single_sum(d, &ABKE, |m| vec![m, m, m + q3, m - q1])),
        stage(3, "Omega_2", "Σ_m |m,m,q3+q1,m−q1⟩/√d", single_sum(d, &ABKE, |m| vec![m, m, q3 + q1, m - q1])),
        stage(3, "Omega_3", "Σ_m |m,m,m+q3,m−q1⟩/√d", single_sum(d, &ABKE, |m| vec![m, m, m + q3, m - q1])),
        stage(3, "Omega_4", "Σ_m |m,m,q3,m−q1⟩/√d", single_sum(d, &ABKE, |m| vec![m, m, q3, m - q1])),
        stage(3, "psi_3_1", "Σ_m |m,m,m−q1⟩/√d", single_sum(d, &ABE, |m| vec![m, m, m - q1])),
        stage(4, "psi_4_0", "Σ_{kl} ζ^{−q1(l−k)} |k,l,l−k⟩/d", double_sum(d, &ABE, -q1, |k, l| vec![k, l, l - k])),
        stage(4, "Theta_0", "Σ_{kl} ζ^{−q1(l−k)} |k,l,q4,l−k⟩/d", double_sum(d, &ABKE, -q1, |k, l| vec![k, l, q4, l - k])),
        stage(4, "Theta_1", "Σ_{kl} ζ^{−q1(l−k)} |k,l,k+q4,l−k⟩/d", double_sum(d, &ABKE, -q1, |k, l| vec![k, l, k + q4, l - k])),
        stage(4, "Theta_2", "Σ_{kl} ζ^{−q1(l−k)} |k,l,l+q4,l−k⟩/d", double_sum(d, &ABKE, -q1, |k, l| vec![k, l, l + q4, l - k])),
        stage(4, "Theta_3", "Σ_{kl} ζ^{−q1(l−k)} |k,l,q4,l−k⟩/d", double_sum(d, &ABKE, -q1, |k, l| vec![k, l, q4, l - k])),
        stage(4, "psi_4_1", "Σ_{kl} ζ^{−q1(l−k)} |k,l,l−k⟩/d", double_sum(d, &ABE, -q1, |k, l| vec![k, l, l - k])),
        stage(5, "psi_5_0", "Σ_j |j,j,j+q1⟩/√d", single_sum(d, &ABE, |j| vec![j, j, j + q1])),
        stage(5, "Upsilon_0", "Σ_j |j,j,q5,j+q1⟩/√d", single_sum(d, &ABKE, |j| vec![j, j, q5, j + q1])),
        stage(5, "Upsilon_1", "Σ_j |j,j,j+q5,j+q1⟩/√d", single_sum(d, &ABKE, |j| vec![j, j, j + q5, j + q1])),
        stage(5, "Upsilon_2", "Σ_j |j,j,q5−q1,j+q1⟩/√d", single_sum(d, &ABKE, |j| vec![j, j, q5 - q1, j + q1])),
        stage(5, "Upsilon_3", "Σ_j |j,j,j+q5,j+q1⟩/√d", single_sum(d, &ABKE, |j| vec![j, j, j + q5, j + q1])),
        stage(5, "Upsilon_4", "Σ_j |j,j,q5,j+q1⟩/√d", single_sum(d, &ABKE, |j| vec![j, j, q5, j + q1])),
    ])
}

#[derive(Clone, Debug, Serialize)]
pub struct StageCheck {
    pub round: usize,
    pub label: String,
    pub formula: String,
    pub passed: bool,
    /// Largest amplitude deviation, global factors included.
    pub max_deviation: f64,
    /// First basis term whose amplitude differs, when the check fails.
    pub first_difference: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub dim: u32,
    pub key: Vec<u32>,
    pub mode: ArithmeticMode,
    pub checks: Vec<StageCheck>,
    /// Shared state after round 5 equals the state after round 1.
    pub recurrence: StageCheck,
    pub elapsed_ms: u128,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.recurrence.passed && self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&StageCheck> {
        self.checks
            .iter()
            .chain(std::iter::once(&self.recurrence))
            .find(|c| !c.passed)
    }
}

fn compare<A: Amplitude>(
    round: usize,
    label: &str,
    formula: &str,
    simulated: &PureState<A>,
    expected: &PureState<A>,
) -> Result<StageCheck> {
    let max_deviation = simulated.max_amplitude_distance(expected)?;
    let passed = if A::EXACT {
        simulated.state_equals(expected, CompareMode::Exact)?
    } else {
        max_deviation <= FLOAT_TOL
    };
    let first_difference = (!passed).then(|| first_difference(simulated, expected));
    Ok(StageCheck {
        round,
        label: label.to_string(),
        formula: formula.to_string(),
        passed,
        max_deviation,
        first_difference,
    })
}

fn first_difference<A: Amplitude>(simulated: &PureState<A>, expected: &PureState<A>) -> String {
    let order: Vec<&str> = simulated.wires().iter().map(String::as_str).collect();
    let Ok(expected) = expected.reorder(&order) else {
        return format!("wires {:?} vs {:?}", simulated.wires(), expected.wires());
    };
    let keys: std::collections::BTreeSet<&BasisTuple> =
        simulated.terms().keys().chain(expected.terms().keys()).collect();
    for k in keys {
        let (s, e) = (simulated.complex_amplitude(k), expected.complex_amplitude(k));
        if (s - e).norm() > FLOAT_TOL || simulated.terms().contains_key(k) != expected.terms().contains_key(k) {
            return format!(
                "|{}⟩_{{{}}}: simulated {:.6}{:+.6}i, expected {:.6}{:+.6}i",
                k.values().iter().map(u32::to_string).collect::<Vec<_>>().join(","),
                order.join(","),
                s.re,
                s.im,
                e.re,
                e.im
            );
        }
    }
    "amplitudes agree numerically but differ exactly".into()
}

/// Runs a five-round attacked session and checks every stage against its
/// closed form, plus the recurrence of the shared state after round 5.
pub fn verify_stages<A: Amplitude>(dim: u32, key: &[u32]) -> Result<VerifyReport> {
    let started = Instant::now();
    let key5 = key.get(..5).ok_or_else(|| {
        Error::InvalidConfig(format!("verification needs five key dits, got {}", key.len()))
    })?;
    let config = ProtocolConfig::new(dim, key5.to_vec()).with_mode(ArithmeticMode::of::<A>());
    let session: SessionTranscript<A> = run_session(&config, AdversaryStrategy::gao())?;
    let expected = expected_stages::<A>(dim, key5)?;

    let mut checks = Vec::with_capacity(expected.len());
    for exp in &expected {
        let round = &session.rounds[exp.round - 1];
        let simulated = round.stage(exp.label).ok_or_else(|| {
            Error::InvariantViolation(format!("round {} has no stage {}", exp.round, exp.label))
        })?;
        checks.push(compare(exp.round, exp.label, exp.formula, simulated, &exp.state)?);
    }
    let after_one = session.rounds[0]
        .stage("psi_1_1")
        .expect("round 1 always records its end state");
    let after_five = session.rounds[4]
        .stage("psi_5_1")
        .expect("round 5 always records its end state");
    let recurrence = compare(5, "psi_5_1", "= psi_1_1", after_five, after_one)?;

    Ok(VerifyReport {
        dim,
        key: key5.to_vec(),
        mode: ArithmeticMode::of::<A>(),
        checks,
        recurrence,
        elapsed_ms: started.elapsed().as_millis(),
    })
}
