use num_traits::{One, Zero};
use proptest::prelude::*;

use qkdlab::adversary::{AdversaryStrategy, AttackKind};
use qkdlab::analysis::compute_metrics;
use qkdlab::protocol::{run_session, ProtocolConfig, SessionTranscript};
use qkdlab::register::{bell_state, CompareMode};
use qkdlab::ring::{rational, CycloElem, Probability, Rational};

fn session(d: u32, key: Vec<u32>, strategy: AdversaryStrategy) -> SessionTranscript<CycloElem> {
    run_session::<CycloElem>(&ProtocolConfig::new(d, key), strategy).unwrap()
}

fn keys(d: u32, n: usize) -> impl Iterator<Item = Vec<u32>> {
    (0..d.pow(n as u32)).map(move |mut c| {
        (0..n)
            .map(|_| {
                let v = c % d;
                c /= d;
                v
            })
            .collect()
    })
}

fn key_strategy(max_dim: usize, len: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = (u32, Vec<u32>)> {
    prop::sample::select(vec![2u32, 3, 5, 7][..max_dim].to_vec())
        .prop_flat_map(move |d| (Just(d), prop::collection::vec(0..d, len.clone())))
}

#[test]
fn honest_sessions_exhaustive() {
    for d in [2u32, 3, 5, 7] {
        let bell = bell_state::<CycloElem>(d).unwrap();
        for n in 1..=3 {
            for key in keys(d, n) {
                let s = session(d, key.clone(), AdversaryStrategy::none());
                assert_eq!(s.bob_outcomes(), key);
                assert!(s.final_shared_state.state_equals(&bell, CompareMode::Exact).unwrap());
            }
        }
    }
}

#[test]
fn gao_exhaustive_five_rounds() {
    for d in [2u32, 3] {
        for key in keys(d, 5) {
            assert_eq!(session(d, key.clone(), AdversaryStrategy::gao()).bob_outcomes(), key);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn honest_twelve_rounds((d, key) in key_strategy(4, 12..=12)) {
        let s = session(d, key.clone(), AdversaryStrategy::none());
        prop_assert_eq!(s.bob_outcomes(), key);
        let bell = bell_state::<CycloElem>(d).unwrap();
        prop_assert!(s.final_shared_state.state_equals(&bell, CompareMode::Exact).unwrap());
        for r in &s.rounds {
            prop_assert!(r.stage("in_transit").unwrap().reduced_density("k").unwrap().is_maximally_mixed());
        }
    }

    #[test]
    fn gao_is_silent_and_periodic((d, key) in key_strategy(3, 13..=13)) {
        let s = session(d, key.clone(), AdversaryStrategy::gao());
        prop_assert_eq!(s.bob_outcomes(), key.clone());
        let after = |r: usize| s.rounds[r - 1].stage(&format!("psi_{r}_1")).unwrap().clone();
        for r in [5usize, 9, 13] {
            prop_assert!(after(r).state_equals(&after(1), CompareMode::Exact).unwrap());
        }
        for o in &s.observations {
            let sign: i64 = if o.round % 4 == 3 { 1 } else { -1 };
            let want = (key[o.round - 1] as i64 + sign * key[0] as i64).rem_euclid(d as i64) as u32;
            prop_assert_eq!(o.value, want);
        }
    }

    #[test]
    fn branch_probabilities_sum_to_one(
        (d, key) in key_strategy(3, 3..=4),
        seed in any::<u64>(),
        attack in 0..3usize,
    ) {
        let strategy = match attack {
            0 => AttackKind::None,
            1 => AttackKind::Gao,
            _ => AttackKind::InterceptResend { attack_rounds: [1, 3].into() },
        };
        let config = ProtocolConfig::new(d, key).with_seed(seed);
        let s = run_session::<CycloElem>(&config, AdversaryStrategy::new(strategy)).unwrap();
        for r in &s.rounds {
            for stage in &r.stages {
                for wire in stage.state.wires() {
                    let total = stage
                        .state
                        .measurement_branches(wire)
                        .unwrap()
                        .iter()
                        .fold(Probability::zero(), |acc, b| &acc + &b.probability);
                    prop_assert!(matches!(total, Probability::Exact(ref t) if t.is_one()));
                }
                prop_assert!(matches!(stage.state.norm_squared(), Probability::Exact(ref t) if t.is_one()));
            }
        }
    }

    #[test]
    fn transcripts_are_deterministic((d, key) in key_strategy(3, 2..=5), seed in any::<u64>()) {
        let config = ProtocolConfig::new(d, key).with_seed(seed);
        let run = || {
            let s = run_session::<CycloElem>(&config, AdversaryStrategy::intercept_resend([1, 2])).unwrap();
            serde_json::to_string(&s.to_json().unwrap()).unwrap()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn metrics_are_pure((d, key) in key_strategy(3, 3..=6), seed in any::<u64>()) {
        let config = ProtocolConfig::new(d, key.clone()).with_seed(seed);
        let mut s = run_session::<CycloElem>(&config, AdversaryStrategy::intercept_resend([2])).unwrap();
        s.announce_subsequence(&[1, 3]).unwrap();
        let m = compute_metrics(&s, &key).unwrap();
        prop_assert_eq!(&m, &compute_metrics(&s, &key).unwrap());
        prop_assert!(m.qber_overall >= Rational::zero() && m.qber_overall <= Rational::one());
        prop_assert_eq!(m.eve_candidate_count, d as usize);
    }
}

#[test]
fn knowledge_fraction_tends_to_half() {
    let mut last = Rational::one();
    for n in [5usize, 11, 21, 41] {
        let key: Vec<u32> = (0..n as u32).map(|i| (i * 7 + 1) % 3).collect();
        let mut s = session(3, key.clone(), AdversaryStrategy::gao());
        s.announce_subsequence(&[3]).unwrap();
        let f = compute_metrics(&s, &key).unwrap().eve_known_fraction;
        assert_eq!(f, rational(n.div_ceil(2) as i64, n as i64));
        assert!(f < last);
        last = f;
    }
}
