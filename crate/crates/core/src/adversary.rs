//! Eavesdropping strategies and Eve's key inference.
//!
//! The ancilla attack ([`AttackKind::Gao`]) runs on a four-round cycle once
//! its ancilla is entangled in round 1: even rounds only keep the
//! entanglement alive, odd rounds read `q_m ± q₁` off the transit qudit
//! without disturbing it.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::register::{OutcomeSource, PureState, ShiftDirection};
use crate::ring::Amplitude;

pub const ALICE: &str = "a";
pub const BOB: &str = "b";
pub const KEY: &str = "k";
pub const EVE: &str = "e";

/// Which attack a strategy runs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackKind {
    None,
    InterceptResend { attack_rounds: BTreeSet<usize> },
    Gao,
}

impl AttackKind {
    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::InterceptResend { .. } => "intercept",
            AttackKind::Gao => "gao",
        }
    }
}

/// Dit read by Eve at an odd round `m ≥ 3`; it equals `q_m + sign·q₁`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct EveObservation {
    pub round: usize,
    pub value: u32,
    pub sign: i8,
}

/// `+1` for rounds `≡ 3 (mod 4)`, `−1` for rounds `≡ 1 (mod 4)`.
pub fn observation_sign(round: usize) -> i8 {
    if round % 4 == 3 {
        1
    } else {
        -1
    }
}

/// What the channel hands to Bob, plus Eve's intermediate states.
#[derive(Clone, Debug)]
pub struct TransitOutcome<A> {
    pub state: PureState<A>,
    pub intermediates: Vec<PureState<A>>,
    pub observation: Option<u32>,
}

impl<A: Amplitude> TransitOutcome<A> {
    fn untouched(state: PureState<A>) -> Self {
        Self {
            state,
            intermediates: Vec::new(),
            observation: None,
        }
    }
}

/// Stateful eavesdropper attached to one session.
#[derive(Clone, Debug)]
pub struct AdversaryStrategy {
    kind: AttackKind,
    rounds_seen: usize,
    observations: Vec<EveObservation>,
    intercepts: Vec<(usize, u32)>,
}

impl AdversaryStrategy {
    pub fn new(kind: AttackKind) -> Self {
        Self {
            kind,
            rounds_seen: 0,
            observations: Vec::new(),
            intercepts: Vec::new(),
        }
    }

    pub fn none() -> Self {
        Self::new(AttackKind::None)
    }

    pub fn gao() -> Self {
        Self::new(AttackKind::Gao)
    }

    pub fn intercept_resend(rounds: impl IntoIterator<Item = usize>) -> Self {
        Self::new(AttackKind::InterceptResend {
            attack_rounds: rounds.into_iter().collect(),
        })
    }

    pub fn kind(&self) -> &AttackKind {
        &self.kind
    }

    pub fn observations(&self) -> &[EveObservation] {
        &self.observations
    }

    /// Raw intercept-resend measurement results as `(round, dit)`.
    pub fn intercepts(&self) -> &[(usize, u32)] {
        &self.intercepts
    }

    /// Attaches Eve's ancilla `|0⟩_e` before the first round.
    pub fn prepare<A: Amplitude>(&self, state: PureState<A>) -> Result<PureState<A>> {
        match self.kind {
            AttackKind::Gao => state.adjoin(EVE, 0),
            _ => Ok(state),
        }
    }

    /// Called when Alice and Bob apply `H ⊗ H*` at the start of a round.
    pub fn on_basis_change<A: Amplitude>(
        &mut self,
        state: PureState<A>,
        round: usize,
    ) -> Result<PureState<A>> {
        if round != self.rounds_seen + 1 {
            return Err(Error::StrategyOrder(format!(
                "round {round} follows round {}",
                self.rounds_seen
            )));
        }
        self.rounds_seen = round;
        match self.kind {
            AttackKind::Gao if round > 1 => gao_on_basis_change(&state, round),
            _ => Ok(state),
        }
    }

    /// Called while the key qudit travels from Alice to Bob.
    pub fn on_transit<A: Amplitude, S: OutcomeSource + ?Sized>(
        &mut self,
        state: PureState<A>,
        round: usize,
        source: &mut S,
    ) -> Result<TransitOutcome<A>> {
        match &self.kind {
            AttackKind::None => Ok(TransitOutcome::untouched(state)),
            AttackKind::InterceptResend { attack_rounds } if attack_rounds.contains(&round) => {
                let (collapsed, value) = intercept_resend_on_transit(&state, source)?;
                self.intercepts.push((round, value));
                Ok(TransitOutcome {
                    state: collapsed,
                    intermediates: Vec::new(),
                    observation: Some(value),
                })
            }
            AttackKind::InterceptResend { .. } => Ok(TransitOutcome::untouched(state)),
            AttackKind::Gao => {
                let outcome = gao_on_transit(&state, round)?;
                if let Some(value) = outcome.observation {
                    self.observations.push(EveObservation {
                        round,
                        value,
                        sign: observation_sign(round),
                    });
                }
                Ok(outcome)
            }
        }
    }

    /// Name of the labelled stage family for `round`, if the strategy has one.
    pub fn stage_family(&self, round: usize) -> Option<&'static str> {
        match self.kind {
            AttackKind::Gao => Some(match (round, round % 4) {
                (1, _) => "Phi",
                (_, 2) => "Psi",
                (_, 3) => "Omega",
                (_, 0) => "Theta",
                _ => "Upsilon",
            }),
            _ => None,
        }
    }

    pub fn knowledge(&self, dim: u32) -> Result<EveKnowledge> {
        EveKnowledge::new(dim, self.observations.clone())
    }
}

/// Eve mirrors Alice and Bob's basis change with `H` on her ancilla.
pub fn gao_on_basis_change<A: Amplitude>(state: &PureState<A>, round: usize) -> Result<PureState<A>> {
    if round < 2 {
        return Err(Error::StrategyOrder(
            "the ancilla is only rotated from round 2 on".into(),
        ));
    }
    state.hadamard(EVE, false)
}

/// Eve's operations on the transit qudit in `round`.
pub fn gao_on_transit<A: Amplitude>(state: &PureState<A>, round: usize) -> Result<TransitOutcome<A>> {
    if !state.has_wire(KEY) {
        return Err(Error::MissingWire(KEY.into()));
    }
    if round == 0 {
        return Err(Error::StrategyOrder("rounds are numbered from 1".into()));
    }
    if round == 1 {
        let st = state.controlled_shift(KEY, EVE, ShiftDirection::Right)?;
        return Ok(TransitOutcome {
            state: st.clone(),
            intermediates: vec![st],
            observation: None,
        });
    }
    if round.is_multiple_of(2) {
        let st = state.controlled_shift(EVE, KEY, ShiftDirection::Right)?;
        return Ok(TransitOutcome {
            state: st.clone(),
            intermediates: vec![st],
            observation: None,
        });
    }
    let disentangled = state.controlled_shift(EVE, KEY, ShiftDirection::Left)?;
    let value = disentangled.deterministic_outcome(KEY)?.ok_or_else(|| {
        Error::InvariantViolation(format!(
            "transit qudit is not definite after Eve's unshift in round {round}"
        ))
    })?;
    let restored = disentangled.controlled_shift(EVE, KEY, ShiftDirection::Right)?;
    Ok(TransitOutcome {
        state: restored.clone(),
        intermediates: vec![disentangled, restored],
        observation: Some(value),
    })
}

/// Measures the transit qudit and forwards the collapsed state.
pub fn intercept_resend_on_transit<A: Amplitude, S: OutcomeSource + ?Sized>(
    state: &PureState<A>,
    source: &mut S,
) -> Result<(PureState<A>, u32)> {
    let m = state.measure(KEY, source)?;
    Ok((m.collapsed, m.outcome))
}

/// Eve's observations and her remaining hypotheses for `q₁`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EveKnowledge {
    pub dim: u32,
    pub observations: Vec<EveObservation>,
    pub q1_candidates: BTreeSet<u32>,
    pub resolved_q1: Option<u32>,
}

impl EveKnowledge {
    pub fn new(dim: u32, observations: Vec<EveObservation>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for o in &observations {
            if o.round < 3 || o.round % 2 == 0 {
                return Err(Error::Inconsistent(format!(
                    "observation at round {} (only odd rounds ≥ 3 are observable)",
                    o.round
                )));
            }
            if o.sign != observation_sign(o.round) {
                return Err(Error::Inconsistent(format!(
                    "sign {} does not match round {}",
                    o.sign, o.round
                )));
            }
            if o.value >= dim {
                return Err(Error::InvalidDit { value: o.value, dim });
            }
            if !seen.insert(o.round) {
                return Err(Error::Inconsistent(format!("round {} observed twice", o.round)));
            }
        }
        Ok(Self {
            dim,
            observations,
            q1_candidates: (0..dim).collect(),
            resolved_q1: None,
        })
    }

    /// Key dits implied by the hypothesis `q₁ = h`: `q_m = r_m − sign·h`.
    pub fn implied_dits(&self, h: u32) -> BTreeMap<usize, u32> {
        let d = self.dim as i64;
        let mut dits: BTreeMap<usize, u32> = self
            .observations
            .iter()
            .map(|o| {
                let q = (o.value as i64 - o.sign as i64 * h as i64).rem_euclid(d);
                (o.round, q as u32)
            })
            .collect();
        dits.insert(1, h);
        dits
    }

    /// One candidate partial key per hypothesis for `q₁`.
    pub fn hypotheses(&self) -> BTreeMap<u32, BTreeMap<usize, u32>> {
        self.q1_candidates
            .iter()
            .map(|&h| (h, self.implied_dits(h)))
            .collect()
    }
}

/// Output of [`infer_keys`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Inference {
    pub resolved_q1: Option<u32>,
    pub candidates: BTreeSet<u32>,
    pub known_dits: BTreeMap<usize, u32>,
}

/// Narrows Eve's hypotheses for `q₁` with publicly announced dits.
///
/// An announced dit of an observed odd round `m` pins `q₁ = sign·(r_m − q_m)`;
/// an announcement of round 1 reveals it directly. Even rounds carry no
/// information. Once `q₁` is fixed, every observed round is known.
pub fn infer_keys(knowledge: &EveKnowledge, announced: &[(usize, u32)]) -> Result<Inference> {
    let d = knowledge.dim as i64;
    let by_round: BTreeMap<usize, &EveObservation> =
        knowledge.observations.iter().map(|o| (o.round, o)).collect();
    let mut candidates = knowledge.q1_candidates.clone();
    for &(round, dit) in announced {
        if dit >= knowledge.dim {
            return Err(Error::InvalidDit {
                value: dit,
                dim: knowledge.dim,
            });
        }
        let implied = if round == 1 {
            dit
        } else if let Some(o) = by_round.get(&round) {
            ((o.value as i64 - dit as i64) * o.sign as i64).rem_euclid(d) as u32
        } else {
            continue;
        };
        if !candidates.contains(&implied) {
            return Err(Error::Inconsistent(format!(
                "announced dit {dit} of round {round} contradicts every remaining hypothesis"
            )));
        }
        candidates = BTreeSet::from([implied]);
    }
    let resolved_q1 = match candidates.len() {
        1 => candidates.first().copied(),
        _ => None,
    };
    let known_dits = resolved_q1
        .map(|h| knowledge.implied_dits(h))
        .unwrap_or_default();
    Ok(Inference {
        resolved_q1,
        candidates,
        known_dits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::register::{bell_state, BasisTuple, CompareMode};
    use crate::ring::CycloElem;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs(round: usize, value: u32) -> EveObservation {
        EveObservation {
            round,
            value,
            sign: observation_sign(round),
        }
    }

    fn closed(d: u32, wires: &[&str], s: u32, terms: Vec<(Vec<u32>, i64)>) -> PureState<CycloElem> {
        let mut map: BTreeMap<BasisTuple, CycloElem> = BTreeMap::new();
        for (t, e) in terms {
            let z = CycloElem::zeta_pow(d, e).unwrap();
            map.entry(BasisTuple(t))
                .and_modify(|a| *a = &*a + &z)
                .or_insert(z);
        }
        PureState::from_terms(d, wires.iter().map(|w| w.to_string()).collect(), s, map).unwrap()
    }

    fn psi11(d: u32, q1: u32) -> PureState<CycloElem> {
        closed(d, &["a", "b", "e"], 1, (0..d).map(|j| (vec![j, j, (j + q1) % d], 0)).collect())
    }

    fn mirrored(st: &PureState<CycloElem>, round: usize) -> PureState<CycloElem> {
        let ab = st.hadamard_layer(&[("a", false), ("b", true)]).unwrap();
        gao_on_basis_change(&ab, round).unwrap()
    }

    #[test]
    fn signs_alternate() {
        let signs: Vec<i8> = [3, 5, 7, 9, 11].iter().map(|&m| observation_sign(m)).collect();
        assert_eq!(signs, vec![1, -1, 1, -1, 1]);
    }

    #[test]
    fn basis_change_maps_between_round_states() {
        let d = 3;
        let q1 = 1u32;
        let psi20 = mirrored(&psi11(d, q1), 2);
        let expect20 = closed(
            d,
            &["a", "b", "e"],
            2,
            (0..d)
                .flat_map(|k| (0..d).map(move |l| (vec![k, l, (l + d - k) % d], (q1 as i64) * (l as i64 - k as i64))))
                .collect(),
        );
        assert!(psi20.state_equals(&expect20, CompareMode::Exact).unwrap());
        assert_eq!(psi20.scale_exp(), 2);

        // ψ₂₁ = ψ₂₀ after the round, and one more mirrored change gives Σ|m,m,m−q₁⟩
        let psi30 = mirrored(&psi20, 3);
        let expect30 = closed(d, &["a", "b", "e"], 1, (0..d).map(|m| (vec![m, m, (m + d - q1) % d], 0)).collect());
        assert!(psi30.state_equals(&expect30, CompareMode::Exact).unwrap());

        let psi40 = mirrored(&psi30, 4);
        let psi50 = mirrored(&psi40, 5);
        assert!(psi50.state_equals(&psi11(d, q1), CompareMode::Exact).unwrap());
    }

    #[test]
    fn basis_change_rejected_in_round_one() {
        let st = psi11(3, 0);
        assert!(matches!(gao_on_basis_change(&st, 1), Err(Error::StrategyOrder(_))));
    }

    #[test]
    fn transit_round_one_copies_key_into_ancilla() {
        let d = 3;
        let phi1 = closed(d, &["a", "b", "k", "e"], 1, (0..d).map(|j| (vec![j, j, (j + 1) % d, 0], 0)).collect());
        let out = gao_on_transit(&phi1, 1).unwrap();
        let phi2 = closed(d, &["a", "b", "k", "e"], 1, (0..d).map(|j| (vec![j, j, (j + 1) % d, (j + 1) % d], 0)).collect());
        assert!(out.state.state_equals(&phi2, CompareMode::Exact).unwrap());
        assert_eq!(out.observation, None);
    }

    #[test]
    fn transit_even_round_moves_key_by_ancilla() {
        let (d, q1, q2) = (3u32, 1u32, 2u32);
        let stage = |kval: &dyn Fn(u32, u32) -> u32| {
            closed(
                d,
                &["a", "b", "k", "e"],
                2,
                (0..d)
                    .flat_map(|k| (0..d).map(move |l| (k, l)))
                    .map(|(k, l)| (vec![k, l, kval(k, l), (l + d - k) % d], q1 as i64 * (l as i64 - k as i64)))
                    .collect(),
            )
        };
        let psi1 = stage(&|k, _| (k + q2) % d);
        let psi2 = stage(&|_, l| (l + q2) % d);
        let out = gao_on_transit(&psi1, 2).unwrap();
        assert!(out.state.state_equals(&psi2, CompareMode::Exact).unwrap());
    }

    #[test]
    fn transit_odd_round_reads_offset_key() {
        let (d, q1, q5) = (3u32, 1u32, 2u32);
        let ups1 = closed(
            d,
            &["a", "b", "k", "e"],
            1,
            (0..d).map(|j| (vec![j, j, (j + q5) % d, (j + q1) % d], 0)).collect(),
        );
        let out = gao_on_transit(&ups1, 5).unwrap();
        assert_eq!(out.observation, Some(1));
        assert!(out.state.state_equals(&ups1, CompareMode::Exact).unwrap());
        assert_eq!(out.intermediates.len(), 2);

        // a schedule that skipped the ancilla rotation leaves k indefinite
        let broken = bell_state::<CycloElem>(3).unwrap().adjoin("e", 0).unwrap().adjoin("k", 0).unwrap();
        let broken = broken.hadamard("e", false).unwrap();
        assert!(matches!(gao_on_transit(&broken, 3), Err(Error::InvariantViolation(_))));
    }

    #[test]
    fn intercept_outcome_is_uniform_and_bob_unaffected() {
        let d = 3;
        let st = bell_state::<CycloElem>(d).unwrap().adjoin("k", 1).unwrap();
        let st = st.controlled_shift("a", "k", ShiftDirection::Right).unwrap();
        let branches = st.measurement_branches("k").unwrap();
        assert_eq!(branches.iter().map(|b| b.outcome).collect::<Vec<_>>(), vec![0, 1, 2]);
        for b in &branches {
            assert_eq!(b.probability, crate::ring::Probability::Exact(crate::ring::rational(1, 3)));
            let decoded = b.collapsed.controlled_shift("b", "k", ShiftDirection::Left).unwrap();
            assert_eq!(decoded.deterministic_outcome("k").unwrap(), Some(1));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, v) = intercept_resend_on_transit(&st, &mut rng).unwrap();
        assert!(v < 3);
    }

    #[test]
    fn inference_resolves_with_odd_announcement() {
        let k = EveKnowledge::new(3, vec![obs(3, 0), obs(5, 1)]).unwrap();
        let inf = infer_keys(&k, &[(3, 2)]).unwrap();
        assert_eq!(inf.resolved_q1, Some(1));
        assert_eq!(inf.known_dits, BTreeMap::from([(1, 1), (3, 2), (5, 2)]));

        let none = infer_keys(&k, &[]).unwrap();
        assert_eq!(none.resolved_q1, None);
        assert_eq!(none.candidates, BTreeSet::from([0, 1, 2]));
        assert!(none.known_dits.is_empty());

        let even = infer_keys(&k, &[(2, 1)]).unwrap();
        assert_eq!(even.resolved_q1, None);
        assert_eq!(even.candidates.len(), 3);

        let first = infer_keys(&k, &[(1, 2)]).unwrap();
        assert_eq!(first.resolved_q1, Some(2));
    }

    #[test]
    fn inference_detects_contradictions() {
        let k = EveKnowledge::new(3, vec![obs(3, 0), obs(5, 1)]).unwrap();
        // q₃ = 2 pins q₁ = 1 while q₅ = 0 pins q₁ = 2
        assert!(matches!(infer_keys(&k, &[(3, 2), (5, 0)]), Err(Error::Inconsistent(_))));
        assert!(infer_keys(&k, &[(3, 2), (5, 2)]).is_ok());
    }

    #[test]
    fn knowledge_rejects_bad_observations() {
        assert!(EveKnowledge::new(3, vec![obs(2, 0)]).is_err());
        assert!(EveKnowledge::new(3, vec![obs(3, 0), obs(3, 1)]).is_err());
        assert!(EveKnowledge::new(3, vec![EveObservation { round: 5, value: 0, sign: 1 }]).is_err());
        assert!(EveKnowledge::new(3, vec![obs(7, 3)]).is_err());
    }

    #[test]
    fn hypotheses_cover_every_q1() {
        let k = EveKnowledge::new(5, vec![obs(3, 4), obs(5, 0)]).unwrap();
        let h = k.hypotheses();
        assert_eq!(h.len(), 5);
        for (q1, dits) in h {
            assert_eq!(dits[&1], q1);
            assert_eq!((dits[&3] + q1) % 5, 4);
            assert_eq!((dits[&5] + 5 - q1) % 5, 0);
        }
    }

    #[test]
    fn strategy_enforces_round_order() {
        let mut eve = AdversaryStrategy::gao();
        let st = eve.prepare(bell_state::<CycloElem>(3).unwrap()).unwrap();
        let st = eve.on_basis_change(st, 1).unwrap();
        assert!(matches!(eve.on_basis_change(st, 3), Err(Error::StrategyOrder(_))));
    }
}
