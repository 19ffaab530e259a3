//! Session metrics, exact branch enumeration and Monte-Carlo experiments.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use num_traits::{One, Signed, Zero};
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::adversary::{AdversaryStrategy, AttackKind};
use crate::error::{Error, Result};
use crate::protocol::{
    derive_seed, run_session, run_session_with, AnnouncePolicy, ArithmeticMode, ProtocolConfig,
    SessionTranscript,
};
use crate::register::OutcomeSource;
use crate::ring::{is_prime, rational, rational_string, Amplitude, ComplexF, CycloElem, Probability, Rational};

/// Largest dimension and round count handled by exact enumeration.
pub const ENUMERATION_MAX_DIM: u32 = 7;
pub const ENUMERATION_MAX_ROUNDS: usize = 6;

fn ser_rational<S: Serializer>(r: &Rational, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&rational_string(r))
}

fn ser_rationals<S: Serializer>(v: &[Rational], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(rational_string))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SessionMetrics {
    /// Mismatch fraction over the rounds that stay in the key.
    #[serde(serialize_with = "ser_rational")]
    pub qber_overall: Rational,
    /// 0 or 1 for every round, announced or not.
    #[serde(serialize_with = "ser_rationals")]
    pub qber_by_round: Vec<Rational>,
    pub detection_triggered: bool,
    #[serde(serialize_with = "ser_rational")]
    pub eve_known_fraction: Rational,
    pub eve_candidate_count: usize,
}

/// Metrics of a finished session against Alice's key.
pub fn compute_metrics<A: Amplitude>(
    session: &SessionTranscript<A>,
    true_key: &[u32],
) -> Result<SessionMetrics> {
    let n = session.config.num_rounds;
    let bob = session.bob_outcomes();
    if true_key.len() != n || bob.len() != n {
        return Err(Error::InvalidConfig(format!(
            "key has {} dits, session has {} rounds and {} outcomes",
            true_key.len(),
            n,
            bob.len()
        )));
    }
    let qber_by_round: Vec<Rational> = bob
        .iter()
        .zip(true_key)
        .map(|(b, q)| if b == q { Rational::zero() } else { Rational::one() })
        .collect();
    let key_rounds = session.key_rounds();
    let qber_overall = if key_rounds.is_empty() {
        Rational::zero()
    } else {
        let errors = key_rounds
            .iter()
            .filter(|&&i| !qber_by_round[i - 1].is_zero())
            .count();
        rational(errors as i64, key_rounds.len() as i64)
    };
    let (known, candidates) = match session.eve_inference()? {
        Some(inf) => (inf.known_dits.len(), inf.candidates.len()),
        None => (0, session.config.dim as usize),
    };
    Ok(SessionMetrics {
        qber_overall,
        qber_by_round,
        detection_triggered: session.detection_triggered(),
        eve_known_fraction: rational(known as i64, n as i64),
        eve_candidate_count: candidates,
    })
}

/// Replays a fixed prefix of branch choices, then takes the first branch.
/// Records every decision so the caller can explore the alternatives.
#[derive(Debug, Default)]
pub struct ScriptedSource {
    script: Vec<usize>,
    taken: Vec<(usize, Probability, usize)>,
}

impl ScriptedSource {
    pub fn new(script: Vec<usize>) -> Self {
        Self {
            script,
            taken: Vec::new(),
        }
    }

    /// `(chosen, its probability, number of branches)` per decision.
    pub fn decisions(&self) -> &[(usize, Probability, usize)] {
        &self.taken
    }

    pub fn path_probability(&self) -> Probability {
        self.taken
            .iter()
            .fold(Probability::Exact(Rational::one()), |acc, (_, p, _)| &acc * p)
    }
}

impl OutcomeSource for ScriptedSource {
    fn choose(&mut self, probabilities: &[Probability]) -> usize {
        let i = self.taken.len();
        let pick = self.script.get(i).copied().unwrap_or(0).min(probabilities.len() - 1);
        self.taken.push((pick, probabilities[pick].clone(), probabilities.len()));
        pick
    }
}

/// Every measurement branch of a session with its probability.
pub fn enumerate_sessions<A: Amplitude>(
    config: &ProtocolConfig,
    strategy: &AttackKind,
) -> Result<Vec<(Probability, SessionTranscript<A>)>> {
    let mut leaves = Vec::new();
    let mut stack = vec![Vec::new()];
    while let Some(prefix) = stack.pop() {
        let mut source = ScriptedSource::new(prefix.clone());
        let session =
            run_session_with::<A, _>(config, AdversaryStrategy::new(strategy.clone()), &mut source)?;
        let decisions = source.decisions();
        for (depth, &(chosen, _, width)) in decisions.iter().enumerate().skip(prefix.len()) {
            let base: Vec<usize> = decisions[..depth].iter().map(|d| d.0).collect();
            for alt in (chosen + 1)..width {
                let mut next = base.clone();
                next.push(alt);
                stack.push(next);
            }
        }
        leaves.push((source.path_probability(), session));
    }
    Ok(leaves)
}

fn check_enumerable(dim: u32, rounds: usize) -> Result<()> {
    if !is_prime(dim) || dim > ENUMERATION_MAX_DIM {
        return Err(Error::InvalidConfig(format!(
            "exact enumeration needs a prime d ≤ {ENUMERATION_MAX_DIM}, got {dim}"
        )));
    }
    if rounds == 0 || rounds > ENUMERATION_MAX_ROUNDS {
        return Err(Error::InvalidConfig(format!(
            "exact enumeration covers 1..={ENUMERATION_MAX_ROUNDS} rounds, got {rounds}"
        )));
    }
    Ok(())
}

fn exact_probability(p: &Probability) -> Result<Rational> {
    p.exact()
        .cloned()
        .ok_or_else(|| Error::InvariantViolation("enumeration produced an inexact probability".into()))
}

/// Exact probability that Bob's dit is wrong in the round after an
/// intercept-resend attack at `attack_round`, averaged over uniform dits for
/// the attacked and the following round. Earlier dits are fixed to 0.
pub fn exact_next_round_error(dim: u32, attack_round: usize) -> Result<Rational> {
    check_enumerable(dim, attack_round + 1)?;
    let strategy = AttackKind::InterceptResend {
        attack_rounds: BTreeSet::from([attack_round]),
    };
    let mut total = Rational::zero();
    for qa in 0..dim {
        for qb in 0..dim {
            let mut key = vec![0; attack_round + 1];
            key[attack_round - 1] = qa;
            key[attack_round] = qb;
            let config = ProtocolConfig::new(dim, key.clone());
            for (p, session) in enumerate_sessions::<CycloElem>(&config, &strategy)? {
                if session.rounds[attack_round].bob_outcome != qb {
                    total += exact_probability(&p)?;
                }
            }
        }
    }
    Ok(total / Rational::from_integer((dim * dim).into()))
}

/// Exact distribution of the dit Eve reads when she intercepts round
/// `round` carrying key dit `q` (earlier dits fixed to 0).
pub fn intercept_observation_distribution(
    dim: u32,
    round: usize,
    q: u32,
) -> Result<BTreeMap<u32, Rational>> {
    check_enumerable(dim, round)?;
    let mut key = vec![0; round];
    key[round - 1] = q;
    let config = ProtocolConfig::new(dim, key);
    let strategy = AttackKind::InterceptResend {
        attack_rounds: BTreeSet::from([round]),
    };
    let mut dist: BTreeMap<u32, Rational> = (0..dim).map(|v| (v, Rational::zero())).collect();
    for (p, session) in enumerate_sessions::<CycloElem>(&config, &strategy)? {
        let value = session.rounds[round - 1].eve_observation.ok_or_else(|| {
            Error::InvariantViolation(format!("no interception recorded in round {round}"))
        })?;
        *dist.entry(value).or_default() += exact_probability(&p)?;
    }
    Ok(dist)
}

/// Exact total-variation distance between two distributions.
pub fn total_variation(p: &BTreeMap<u32, Rational>, q: &BTreeMap<u32, Rational>) -> Rational {
    let keys: BTreeSet<&u32> = p.keys().chain(q.keys()).collect();
    let zero = Rational::zero();
    let sum: Rational = keys
        .into_iter()
        .map(|k| (p.get(k).unwrap_or(&zero) - q.get(k).unwrap_or(&zero)).abs())
        .sum();
    sum / Rational::from_integer(2.into())
}

/// Session shape shared by every trial of an experiment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ExperimentConfig {
    pub dim: u32,
    pub num_rounds: usize,
    pub mode: ArithmeticMode,
    pub announce: Vec<usize>,
    pub discard_announced: bool,
}

impl ExperimentConfig {
    pub fn new(dim: u32, num_rounds: usize) -> Self {
        Self {
            dim,
            num_rounds,
            mode: ArithmeticMode::Exact,
            announce: Vec::new(),
            discard_announced: true,
        }
    }

    pub fn with_mode(mut self, mode: ArithmeticMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_announce(mut self, policy: &AnnouncePolicy) -> Self {
        self.announce = policy.indices(self.num_rounds);
        self
    }
}

/// Sample mean with a 3σ binomial interval clipped to [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub sigma: f64,
    pub lower: f64,
    pub upper: f64,
    pub samples: u64,
}

impl Estimate {
    pub fn binomial(successes: u64, samples: u64) -> Self {
        let mean = if samples == 0 {
            0.0
        } else {
            successes as f64 / samples as f64
        };
        let sigma = if samples == 0 {
            0.0
        } else {
            (mean * (1.0 - mean) / samples as f64).sqrt()
        };
        Self {
            mean,
            sigma,
            lower: (mean - 3.0 * sigma).max(0.0),
            upper: (mean + 3.0 * sigma).min(1.0),
            samples,
        }
    }

    /// `|mean − p| ≤ 3σ` with σ taken at `p`.
    pub fn within_3sigma(&self, p: f64) -> bool {
        let sigma = (p * (1.0 - p) / self.samples.max(1) as f64).sqrt();
        (self.mean - p).abs() <= 3.0 * sigma + f64::EPSILON
    }
}

/// Exactly enumerated value next to its sampled estimate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExactEntry {
    pub quantity: String,
    pub round: usize,
    pub value: String,
    pub value_f64: f64,
    pub estimate: Estimate,
    pub within_3sigma: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StrategyReport {
    pub strategy: String,
    pub attack: AttackKind,
    pub config: ExperimentConfig,
    pub trials: u64,
    pub seed: u64,
    /// Pooled over every key dit of every trial.
    pub qber: Estimate,
    pub qber_by_round: Vec<Estimate>,
    pub detection_rate: Estimate,
    pub zero_qber_trials: u64,
    pub eve_known_fraction_mean: f64,
    pub eve_candidate_count_mean: f64,
    pub exact: Option<ExactEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub version: &'static str,
    /// Trial `i` uses `derive_seed(seed, i)` for its key and measurements.
    pub seed_derivation: &'static str,
    pub entries: Vec<StrategyReport>,
}

pub const CSV_HEADER: &str = "strategy,d,rounds,mode,trials,seed,qber_mean,qber_lower,qber_upper,\
detection_rate,zero_qber_trials,eve_known_fraction_mean,eve_candidate_count_mean,\
exact_round,exact_value,exact_value_f64,round_error_mean,round_error_lower,round_error_upper,within_3sigma";

impl ExperimentReport {
    pub fn new(entries: Vec<StrategyReport>) -> Self {
        Self {
            version: "v1",
            seed_derivation: "derive_seed(seed, trial_index)",
            entries,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvariantViolation(e.to_string()))
    }

    /// One row per strategy × dimension.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for e in &self.entries {
            let exact = e.exact.as_ref();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                e.strategy,
                e.config.dim,
                e.config.num_rounds,
                e.config.mode,
                e.trials,
                e.seed,
                e.qber.mean,
                e.qber.lower,
                e.qber.upper,
                e.detection_rate.mean,
                e.zero_qber_trials,
                e.eve_known_fraction_mean,
                e.eve_candidate_count_mean,
                exact.map(|x| x.round.to_string()).unwrap_or_default(),
                exact.map(|x| x.value.clone()).unwrap_or_default(),
                exact.map(|x| x.value_f64.to_string()).unwrap_or_default(),
                exact.map(|x| x.estimate.mean.to_string()).unwrap_or_default(),
                exact.map(|x| x.estimate.lower.to_string()).unwrap_or_default(),
                exact.map(|x| x.estimate.upper.to_string()).unwrap_or_default(),
                exact.map(|x| x.within_3sigma.to_string()).unwrap_or_default(),
            );
        }
        out
    }
}

struct TrialResult {
    errors_by_round: Vec<bool>,
    key_dits: u64,
    key_errors: u64,
    detected: bool,
    known_fraction: f64,
    candidates: usize,
}

fn run_trial<A: Amplitude>(
    config: &ExperimentConfig,
    strategy: &AttackKind,
    trial_seed: u64,
) -> Result<TrialResult> {
    let protocol = ProtocolConfig::with_random_key(config.dim, config.num_rounds, trial_seed)
        .with_seed(trial_seed)
        .with_mode(config.mode)
        .with_discard(config.discard_announced);
    let mut session =
        run_session::<A>(&protocol, AdversaryStrategy::new(strategy.clone()))?;
    session.announce_subsequence(&config.announce)?;
    let metrics = compute_metrics(&session, &protocol.key)?;
    let key_rounds = session.key_rounds();
    let key_errors = key_rounds
        .iter()
        .filter(|&&i| !metrics.qber_by_round[i - 1].is_zero())
        .count() as u64;
    Ok(TrialResult {
        errors_by_round: metrics.qber_by_round.iter().map(|r| !r.is_zero()).collect(),
        key_dits: key_rounds.len() as u64,
        key_errors,
        detected: metrics.detection_triggered,
        known_fraction: crate::ring::rational_to_f64(&metrics.eve_known_fraction),
        candidates: metrics.eve_candidate_count,
    })
}

/// The round whose error rate has an exact counterpart, if any.
fn exact_target(config: &ExperimentConfig, strategy: &AttackKind) -> Option<usize> {
    match strategy {
        AttackKind::InterceptResend { attack_rounds } if attack_rounds.len() == 1 => {
            let r = *attack_rounds.first()?;
            (r < config.num_rounds
                && config.mode == ArithmeticMode::Exact
                && is_prime(config.dim)
                && config.dim <= ENUMERATION_MAX_DIM
                && r < ENUMERATION_MAX_ROUNDS)
                .then_some(r + 1)
        }
        _ => None,
    }
}

/// Runs `trials` independent sessions with random keys and aggregates them
/// in trial order. Trials run in parallel.
pub fn monte_carlo(
    config: &ExperimentConfig,
    strategy: &AttackKind,
    trials: u64,
    seed: u64,
) -> Result<ExperimentReport> {
    if trials == 0 {
        return Err(Error::InvalidConfig("an experiment needs at least one trial".into()));
    }
    if config.num_rounds == 0 {
        return Err(Error::InvalidConfig("a session needs at least one round".into()));
    }
    if config.mode == ArithmeticMode::Exact && !is_prime(config.dim) {
        return Err(Error::InvalidConfig(format!(
            "exact mode needs a prime dimension, got {}",
            config.dim
        )));
    }
    if let Some(&index) = config
        .announce
        .iter()
        .find(|&&i| i == 0 || i > config.num_rounds)
    {
        return Err(Error::IndexOutOfRange {
            index,
            rounds: config.num_rounds,
        });
    }
    let results: Vec<TrialResult> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(seed, i);
            match config.mode {
                ArithmeticMode::Exact => run_trial::<CycloElem>(config, strategy, s),
                ArithmeticMode::Float => run_trial::<ComplexF>(config, strategy, s),
            }
        })
        .collect::<Result<_>>()?;

    let n = config.num_rounds;
    let mut round_errors = vec![0u64; n];
    let (mut dits, mut errors, mut detected, mut zero) = (0u64, 0u64, 0u64, 0u64);
    let (mut known, mut candidates) = (0.0f64, 0u64);
    for r in &results {
        for (slot, &e) in round_errors.iter_mut().zip(&r.errors_by_round) {
            *slot += e as u64;
        }
        dits += r.key_dits;
        errors += r.key_errors;
        detected += r.detected as u64;
        zero += (r.key_errors == 0) as u64;
        known += r.known_fraction;
        candidates += r.candidates as u64;
    }
    let qber_by_round: Vec<Estimate> = round_errors
        .iter()
        .map(|&e| Estimate::binomial(e, trials))
        .collect();
    let exact = match exact_target(config, strategy) {
        Some(round) => {
            let value = exact_next_round_error(config.dim, round - 1)?;
            let value_f64 = crate::ring::rational_to_f64(&value);
            let estimate = qber_by_round[round - 1].clone();
            Some(ExactEntry {
                quantity: "next_round_error".into(),
                round,
                within_3sigma: estimate.within_3sigma(value_f64),
                value: rational_string(&value),
                value_f64,
                estimate,
            })
        }
        None => None,
    };
    Ok(ExperimentReport::new(vec![StrategyReport {
        strategy: strategy.name().to_string(),
        attack: strategy.clone(),
        config: config.clone(),
        trials,
        seed,
        qber: Estimate::binomial(errors, dits),
        qber_by_round,
        detection_rate: Estimate::binomial(detected, trials),
        zero_qber_trials: zero,
        eve_known_fraction_mean: known / trials as f64,
        eve_candidate_count_mean: candidates as f64 / trials as f64,
        exact,
    }]))
}
