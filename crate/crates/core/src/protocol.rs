//! The honest two-party session and its round engine.
//!
//! Every round runs the same schedule on the reused Bell pair:
//!
//! 1. Alice applies `H` to `a`, Bob applies `H*` to `b` (Eve may mirror it);
//! 2. Alice adjoins the key qudit `k = |q⟩` and shifts it by `a`;
//! 3. `k` crosses the channel, where the adversary hook may act on it;
//! 4. Bob shifts `k` back by `b`, measures it and discards the wire.

use std::collections::BTreeSet;
use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adversary::{
    infer_keys, AdversaryStrategy, AttackKind, EveObservation, Inference, ALICE, BOB, KEY,
};
use crate::error::{Error, Result};
use crate::register::{bell_state, OutcomeSource, PureState, ShiftDirection};
use crate::ring::Amplitude;

pub const TRANSCRIPT_VERSION: &str = "v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ArithmeticMode {
    Exact,
    Float,
}

impl ArithmeticMode {
    pub fn of<A: Amplitude>() -> Self {
        if A::EXACT {
            ArithmeticMode::Exact
        } else {
            ArithmeticMode::Float
        }
    }
}

impl fmt::Display for ArithmeticMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArithmeticMode::Exact => "exact",
            ArithmeticMode::Float => "float",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ProtocolConfig {
    pub dim: u32,
    pub num_rounds: usize,
    pub key: Vec<u32>,
    pub arithmetic_mode: ArithmeticMode,
    pub rng_seed: u64,
    /// Announced dits are removed from the usable key.
    pub discard_announced: bool,
}

impl ProtocolConfig {
    pub fn new(dim: u32, key: Vec<u32>) -> Self {
        Self {
            dim,
            num_rounds: key.len(),
            key,
            arithmetic_mode: ArithmeticMode::Exact,
            rng_seed: 0,
            discard_announced: true,
        }
    }

    /// Config with a key drawn from `key_seed`.
    pub fn with_random_key(dim: u32, num_rounds: usize, key_seed: u64) -> Self {
        Self::new(dim, random_key(dim, num_rounds, key_seed))
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn with_mode(mut self, mode: ArithmeticMode) -> Self {
        self.arithmetic_mode = mode;
        self
    }

    pub fn with_discard(mut self, discard: bool) -> Self {
        self.discard_announced = discard;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::InvalidDimension(self.dim));
        }
        if self.num_rounds == 0 {
            return Err(Error::InvalidConfig("a session needs at least one round".into()));
        }
        if self.key.len() != self.num_rounds {
            return Err(Error::InvalidConfig(format!(
                "key has {} dits for {} rounds",
                self.key.len(),
                self.num_rounds
            )));
        }
        if let Some(&value) = self.key.iter().find(|&&q| q >= self.dim) {
            return Err(Error::InvalidDit {
                value,
                dim: self.dim,
            });
        }
        Ok(())
    }
}

/// Uniform key of `len` dits. Keys use stream 1 of the seed so they never
/// share randomness with the measurement stream.
pub fn random_key(dim: u32, len: usize, seed: u64) -> Vec<u32> {
    let mut rng = seeded_stream(seed, 1);
    (0..len).map(|_| rng.gen_range(0..dim)).collect()
}

/// Counter-based stream `stream` of the generator seeded with `seed`.
pub fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed of the `index`-th independent child of `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    seeded_stream(seed, 2 + index).next_u64()
}

/// Labelled snapshot of the joint state.
#[derive(Clone, Debug, Serialize)]
#[serde(bound = "")]
pub struct Stage<A: Amplitude> {
    pub label: String,
    pub state: PureState<A>,
}

#[derive(Clone, Debug, Serialize)]
#[serde(bound = "")]
pub struct RoundTranscript<A: Amplitude> {
    pub index: usize,
    pub stages: Vec<Stage<A>>,
    pub bob_outcome: u32,
    pub eve_observation: Option<u32>,
}

impl<A: Amplitude> RoundTranscript<A> {
    pub fn stage(&self, label: &str) -> Option<&PureState<A>> {
        self.stages.iter().find(|s| s.label == label).map(|s| &s.state)
    }
}

pub fn round_start_label(round: usize) -> String {
    format!("psi_{round}_0")
}

pub fn round_end_label(round: usize) -> String {
    format!("psi_{round}_1")
}

const GENERIC_LABELS: [&str; 4] = ["pre_encode", "post_encode", "in_transit", "post_decode"];

/// Runs one round on `state` and returns the post-round shared state.
pub fn run_round<A: Amplitude, S: OutcomeSource + ?Sized>(
    state: &PureState<A>,
    round: usize,
    q: u32,
    adversary: &mut AdversaryStrategy,
    source: &mut S,
) -> Result<(PureState<A>, RoundTranscript<A>)> {
    if !state.has_wire(ALICE) || !state.has_wire(BOB) {
        return Err(Error::ProtocolViolation(
            "the shared state must hold Alice's and Bob's wires".into(),
        ));
    }
    if state.has_wire(KEY) {
        return Err(Error::ProtocolViolation("a stale key qudit is still present".into()));
    }
    if q >= state.dim() {
        return Err(Error::InvalidDit {
            value: q,
            dim: state.dim(),
        });
    }

    let rotated = state.hadamard_layer(&[(ALICE, false), (BOB, true)])?;
    let start = adversary.on_basis_change(rotated, round)?;

    let loaded = start.adjoin(KEY, q)?;
    let encoded = loaded.controlled_shift(ALICE, KEY, ShiftDirection::Right)?;
    let transit = adversary.on_transit(encoded.clone(), round, source)?;
    if !transit.state.has_wire(KEY) {
        return Err(Error::ProtocolViolation(format!(
            "the channel dropped the key qudit in round {round}"
        )));
    }
    let decoded = transit.state.controlled_shift(BOB, KEY, ShiftDirection::Left)?;
    let measured = decoded.measure(KEY, source)?;
    let (after, bob_outcome) = measured.collapsed.remove_definite_wire(KEY)?;

    let mut snapshots: Vec<PureState<A>> = vec![loaded, encoded];
    let stages = match adversary.stage_family(round) {
        Some(family) => {
            snapshots.extend(transit.intermediates);
            snapshots.push(decoded);
            snapshots
                .into_iter()
                .enumerate()
                .map(|(i, state)| Stage {
                    label: format!("{family}_{i}"),
                    state,
                })
                .collect::<Vec<_>>()
        }
        None => {
            snapshots.push(transit.state);
            snapshots.push(decoded);
            GENERIC_LABELS
                .iter()
                .zip(snapshots)
                .map(|(label, state)| Stage {
                    label: label.to_string(),
                    state,
                })
                .collect()
        }
    };
    let mut all = Vec::with_capacity(stages.len() + 2);
    all.push(Stage {
        label: round_start_label(round),
        state: start,
    });
    all.extend(stages);
    all.push(Stage {
        label: round_end_label(round),
        state: after.clone(),
    });

    Ok((
        after,
        RoundTranscript {
            index: round,
            stages: all,
            bob_outcome,
            eve_observation: transit.observation,
        },
    ))
}

/// Complete record of one session.
#[derive(Clone, Debug)]
pub struct SessionTranscript<A: Amplitude> {
    pub config: ProtocolConfig,
    pub attack: AttackKind,
    pub rounds: Vec<RoundTranscript<A>>,
    pub final_shared_state: PureState<A>,
    pub announced: Vec<(usize, u32)>,
    pub observations: Vec<EveObservation>,
}

/// Runs every round of `config` starting from a fresh Bell pair.
pub fn run_session<A: Amplitude>(
    config: &ProtocolConfig,
    adversary: AdversaryStrategy,
) -> Result<SessionTranscript<A>> {
    let mut rng = seeded_stream(config.rng_seed, 0);
    run_session_with(config, adversary, &mut rng)
}

/// [`run_session`] with an explicit outcome source.
pub fn run_session_with<A: Amplitude, S: OutcomeSource + ?Sized>(
    config: &ProtocolConfig,
    mut adversary: AdversaryStrategy,
    source: &mut S,
) -> Result<SessionTranscript<A>> {
    config.validate()?;
    if config.arithmetic_mode != ArithmeticMode::of::<A>() {
        return Err(Error::InvalidConfig(format!(
            "config asks for {} arithmetic but the session runs in {} mode",
            config.arithmetic_mode,
            A::MODE
        )));
    }
    let mut state = adversary.prepare(bell_state::<A>(config.dim)?)?;
    let mut rounds = Vec::with_capacity(config.num_rounds);
    for (i, &q) in config.key.iter().enumerate() {
        let (next, transcript) = run_round(&state, i + 1, q, &mut adversary, source)?;
        state = next;
        rounds.push(transcript);
    }
    Ok(SessionTranscript {
        config: config.clone(),
        attack: adversary.kind().clone(),
        rounds,
        final_shared_state: state,
        announced: Vec::new(),
        observations: adversary.observations().to_vec(),
    })
}

/// Which rounds Alice and Bob compare publicly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AnnouncePolicy {
    None,
    Odd,
    Even,
    Indices(Vec<usize>),
}

impl AnnouncePolicy {
    pub fn indices(&self, num_rounds: usize) -> Vec<usize> {
        match self {
            AnnouncePolicy::None => Vec::new(),
            AnnouncePolicy::Odd => (1..=num_rounds).step_by(2).collect(),
            AnnouncePolicy::Even => (2..=num_rounds).step_by(2).collect(),
            AnnouncePolicy::Indices(v) => v.clone(),
        }
    }
}

impl std::str::FromStr for AnnouncePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" | "" => Ok(AnnouncePolicy::None),
            "odd" => Ok(AnnouncePolicy::Odd),
            "even" => Ok(AnnouncePolicy::Even),
            list => list
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::InvalidConfig(format!("bad round index `{t}`")))
                })
                .collect::<Result<Vec<_>>>()
                .map(AnnouncePolicy::Indices),
        }
    }
}

impl<A: Amplitude> SessionTranscript<A> {
    pub fn bob_outcomes(&self) -> Vec<u32> {
        self.rounds.iter().map(|r| r.bob_outcome).collect()
    }

    /// Publishes Alice's dits for `indices` (1-based) and records them.
    pub fn announce_subsequence(&mut self, indices: &[usize]) -> Result<Vec<(usize, u32)>> {
        let n = self.config.num_rounds;
        if let Some(&index) = indices.iter().find(|&&i| i == 0 || i > n) {
            return Err(Error::IndexOutOfRange { index, rounds: n });
        }
        let mut fresh = Vec::with_capacity(indices.len());
        for &i in indices {
            if self.announced.iter().any(|&(j, _)| j == i) {
                continue;
            }
            let entry = (i, self.config.key[i - 1]);
            self.announced.push(entry);
            fresh.push(entry);
        }
        Ok(fresh)
    }

    /// Announced rounds whose dit differs from Bob's outcome.
    pub fn mismatches(&self) -> Vec<usize> {
        self.announced
            .iter()
            .filter(|&&(i, dit)| self.rounds[i - 1].bob_outcome != dit)
            .map(|&(i, _)| i)
            .collect()
    }

    pub fn detection_triggered(&self) -> bool {
        !self.mismatches().is_empty()
    }

    /// Rounds that remain part of the key after the comparison.
    pub fn key_rounds(&self) -> Vec<usize> {
        let announced: BTreeSet<usize> = self.announced.iter().map(|&(i, _)| i).collect();
        (1..=self.config.num_rounds)
            .filter(|i| !self.config.discard_announced || !announced.contains(i))
            .collect()
    }

    /// Eve's inference from her observations and the public announcements,
    /// or `None` when the attack collects no observations.
    pub fn eve_inference(&self) -> Result<Option<Inference>> {
        if self.attack != AttackKind::Gao {
            return Ok(None);
        }
        let knowledge = crate::adversary::EveKnowledge::new(self.config.dim, self.observations.clone())?;
        infer_keys(&knowledge, &self.announced).map(Some)
    }

    /// Transcript document: `{version, config, attack, rounds, final_shared_state, announced, detection, eve}`.
    pub fn to_json(&self) -> Result<serde_json::Value> {
        #[derive(Serialize)]
        struct Announcement {
            round: usize,
            dit: u32,
        }
        #[derive(Serialize)]
        struct Eve<'a> {
            observations: &'a [EveObservation],
            intercepts: Vec<Announcement>,
            resolved_q1: Option<u32>,
            candidates: Vec<u32>,
            known_dits: Vec<Announcement>,
        }
        #[derive(Serialize)]
        #[serde(bound = "")]
        struct Doc<'a, A: Amplitude> {
            version: &'static str,
            config: &'a ProtocolConfig,
            attack: &'a AttackKind,
            rounds: &'a [RoundTranscript<A>],
            final_shared_state: &'a PureState<A>,
            announced: Vec<Announcement>,
            detection_triggered: bool,
            eve: Eve<'a>,
        }
        let inference = self.eve_inference()?;
        let gao = self.attack == AttackKind::Gao;
        let intercepts = self
            .rounds
            .iter()
            .filter(|_| !gao)
            .filter_map(|r| r.eve_observation.map(|v| Announcement { round: r.index, dit: v }))
            .collect();
        let eve = Eve {
            observations: &self.observations,
            intercepts,
            resolved_q1: inference.as_ref().and_then(|i| i.resolved_q1),
            candidates: inference
                .as_ref()
                .map(|i| i.candidates.iter().copied().collect())
                .unwrap_or_else(|| (0..self.config.dim).collect()),
            known_dits: inference
                .map(|i| {
                    i.known_dits
                        .into_iter()
                        .map(|(round, dit)| Announcement { round, dit })
                        .collect()
                })
                .unwrap_or_default(),
        };
        let doc = Doc {
            version: TRANSCRIPT_VERSION,
            config: &self.config,
            attack: &self.attack,
            rounds: &self.rounds,
            final_shared_state: &self.final_shared_state,
            announced: self
                .announced
                .iter()
                .map(|&(round, dit)| Announcement { round, dit })
                .collect(),
            detection_triggered: self.detection_triggered(),
            eve,
        };
        serde_json::to_value(doc).map_err(|e| Error::InvariantViolation(e.to_string()))
    }
}
