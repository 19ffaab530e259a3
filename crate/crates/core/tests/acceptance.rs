//! Acceptance criteria 1–10. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any fails.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use num_traits::{One, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qkdlab::adversary::{infer_keys, observation_sign, AdversaryStrategy, AttackKind, EveKnowledge};
use qkdlab::analysis::{
    compute_metrics, exact_next_round_error, intercept_observation_distribution, monte_carlo,
    total_variation, ExperimentConfig,
};
use qkdlab::closed_form::verify_stages;
use qkdlab::protocol::{random_key, run_session, ProtocolConfig, SessionTranscript};
use qkdlab::register::{bell_state, random_state, CompareMode, PureState, ShiftDirection};
use qkdlab::ring::{rational, ComplexF, CycloElem, Probability, Rational};

type Outcome = Result<String, String>;
type Corpus = Vec<(u32, Vec<u32>, SessionTranscript<CycloElem>)>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn gao(d: u32, key: Vec<u32>) -> Result<SessionTranscript<CycloElem>, String> {
    run_session::<CycloElem>(&ProtocolConfig::new(d, key), AdversaryStrategy::gao()).map_err(e2s)
}

fn all_keys(d: u32, n: usize) -> Vec<Vec<u32>> {
    (0..(d as usize).pow(n as u32))
        .map(|mut code| {
            (0..n)
                .map(|_| {
                    let v = (code % d as usize) as u32;
                    code /= d as usize;
                    v
                })
                .collect()
        })
        .collect()
}

fn distinct_keys(d: u32, count: usize, seed: u64) -> Vec<Vec<u32>> {
    let mut keys: Vec<Vec<u32>> = Vec::new();
    let mut s = seed;
    while keys.len() < count {
        let k = random_key(d, 5, s);
        if !keys.contains(&k) {
            keys.push(k);
        }
        s += 1;
    }
    keys
}

fn c1_stage_fidelity() -> Outcome {
    let started = Instant::now();
    let mut checks = 0;
    for d in [2u32, 3, 5] {
        for key in distinct_keys(d, 3, 100 + d as u64) {
            let exact = verify_stages::<CycloElem>(d, &key).map_err(e2s)?;
            ensure(exact.all_passed(), || {
                format!("d={d} key={key:?} exact: {:?}", exact.first_failure())
            })?;
            let float = verify_stages::<ComplexF>(d, &key).map_err(e2s)?;
            ensure(float.all_passed(), || {
                format!("d={d} key={key:?} float: {:?}", float.first_failure())
            })?;
            let worst = float
                .checks
                .iter()
                .map(|c| c.max_deviation)
                .fold(0.0, f64::max);
            ensure(worst <= 1e-12, || format!("float deviation {worst:e}"))?;
            checks += exact.checks.len() + 1;
        }
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("{checks} exact stage checks plus float agreement in {elapsed:.2?}"))
}

/// Gao sessions used by criteria 2 and 3.
fn gao_corpus() -> Result<Corpus, String> {
    let mut corpus = Vec::new();
    for key in all_keys(3, 5) {
        corpus.push((3, key.clone(), gao(3, key)?));
    }
    for d in [2u32, 3, 5, 7] {
        for i in 0..100 {
            let key = random_key(d, 13, 1000 * d as u64 + i);
            corpus.push((d, key.clone(), gao(d, key)?));
        }
    }
    Ok(corpus)
}

fn c2_zero_qber(corpus: &Corpus) -> Outcome {
    for (d, key, s) in corpus {
        ensure(&s.bob_outcomes() == key, || {
            format!("d={d} key={key:?} bob={:?}", s.bob_outcomes())
        })?;
    }
    Ok(format!("{} sessions, Bob matches every key dit", corpus.len()))
}

fn c3_observation_law(corpus: &Corpus) -> Outcome {
    let mut n = 0;
    for (d, key, s) in corpus {
        let d = *d as i64;
        let expected_rounds: Vec<usize> = (3..=key.len()).step_by(2).collect();
        let rounds: Vec<usize> = s.observations.iter().map(|o| o.round).collect();
        ensure(rounds == expected_rounds, || format!("observed rounds {rounds:?}"))?;
        for o in &s.observations {
            let sign: i64 = if o.round % 4 == 3 { 1 } else { -1 };
            ensure(observation_sign(o.round) as i64 == sign, || format!("sign at {}", o.round))?;
            let want = (key[o.round - 1] as i64 + sign * key[0] as i64).rem_euclid(d) as u32;
            ensure(o.value == want, || {
                format!("key={key:?} round {} saw {} want {want}", o.round, o.value)
            })?;
            n += 1;
        }
    }
    Ok(format!("{n} observations follow q_m ± q_1"))
}

fn c4_recurrence() -> Outcome {
    let mut n = 0;
    for d in [2u32, 3, 5, 7] {
        for i in 0..5 {
            let s = gao(d, random_key(d, 9, 77 * d as u64 + i))?;
            let end = |r: usize| s.rounds[r - 1].stage(&format!("psi_{r}_1")).cloned().unwrap();
            for (a, b) in [(5, 1), (9, 5)] {
                let eq = end(a).state_equals(&end(b), CompareMode::Exact).map_err(e2s)?;
                ensure(eq, || format!("d={d}: state after round {a} differs from round {b}"))?;
                n += 1;
            }
        }
    }
    Ok(format!("{n} exact recurrence checks"))
}

fn c5_inference() -> Outcome {
    let mut n = 0;
    for d in [2u32, 3, 5, 7] {
        for i in 0..10 {
            let key = random_key(d, 11, 500 + 31 * d as u64 + i);
            let s = gao(d, key.clone())?;
            let knowledge = EveKnowledge::new(d, s.observations.clone()).map_err(e2s)?;
            let none = infer_keys(&knowledge, &[]).map_err(e2s)?;
            ensure(none.candidates.len() == d as usize && none.candidates.contains(&key[0]), || {
                format!("no-announcement candidates {:?}", none.candidates)
            })?;
            for m in (3..=key.len()).step_by(2) {
                let inf = infer_keys(&knowledge, &[(m, key[m - 1])]).map_err(e2s)?;
                ensure(inf.resolved_q1 == Some(key[0]), || format!("round {m} left {:?}", inf.candidates))?;
                for (&r, &v) in &inf.known_dits {
                    ensure(key[r - 1] == v, || format!("known dit {r} = {v}, key {key:?}"))?;
                }
                ensure(inf.known_dits.len() == key.len().div_ceil(2), || "missing dits".into())?;
                n += 1;
            }
        }
    }
    Ok(format!("{n} single announcements each resolve q_1"))
}

fn c6_known_fraction() -> Outcome {
    let key = random_key(3, 101, 6);
    let mut s = gao(3, key.clone())?;
    s.announce_subsequence(&[3]).map_err(e2s)?;
    let m = compute_metrics(&s, &key).map_err(e2s)?;
    let f = qkdlab::ring::rational_to_f64(&m.eve_known_fraction);
    ensure(f >= 0.49, || format!("fraction {f}"))?;
    Ok(format!("eve_known_fraction = {} ≈ {f:.4}", qkdlab::ring::rational_string(&m.eve_known_fraction)))
}

fn c7_intercept_qber() -> Outcome {
    let started = Instant::now();
    let mut lines = Vec::new();
    for d in [2u32, 3, 5] {
        let want = rational(d as i64 - 1, d as i64);
        for r in [1usize, 2] {
            let exact = exact_next_round_error(d, r).map_err(e2s)?;
            ensure(exact == want, || format!("d={d} r={r}: exact {exact}"))?;
            let strategy = AttackKind::InterceptResend {
                attack_rounds: [r].into(),
            };
            let report = monte_carlo(&ExperimentConfig::new(d, r + 1), &strategy, 10_000, 70 + d as u64 * 10 + r as u64)
                .map_err(e2s)?;
            let entry = report.entries[0].exact.clone().ok_or("no exact entry")?;
            ensure(entry.within_3sigma, || format!("d={d} r={r}: {entry:?}"))?;
            lines.push(format!("d={d} r={r} mc={:.4}", entry.estimate.mean));
        }
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("exact (d-1)/d; {} in {elapsed:.2?}", lines.join(", ")))
}

fn c8_no_information() -> Outcome {
    for d in [2u32, 3, 5] {
        for r in [1usize, 2] {
            let uniform = (0..d).map(|v| (v, rational(1, d as i64))).collect();
            for q in 0..d {
                let dist = intercept_observation_distribution(d, r, q).map_err(e2s)?;
                let tv = total_variation(&dist, &uniform);
                ensure(tv.is_zero(), || format!("d={d} r={r} q={q}: tv {tv}"))?;
            }
        }
    }
    Ok("intercepted dit is exactly uniform for every key value".into())
}

fn norm_is_one(s: &PureState<CycloElem>) -> bool {
    matches!(s.norm_squared(), Probability::Exact(r) if r.is_one())
}

fn c9_engine() -> Outcome {
    for d in [2u32, 3, 5, 7] {
        for j in 0..d as i64 {
            let sum = (0..d as i64).fold(CycloElem::zero(d), |acc, t| &acc + &CycloElem::zeta_pow(d, j * t).unwrap());
            let want = if j == 0 {
                CycloElem::from_rational(d, Rational::from_integer((d as i64).into()))
            } else {
                CycloElem::zero(d)
            };
            ensure(sum == want, || format!("Fourier sum d={d} j={j}"))?;
        }
        let bell = bell_state::<CycloElem>(d).map_err(e2s)?;
        let rotated = bell.hadamard_layer(&[("a", false), ("b", true)]).map_err(e2s)?;
        ensure(rotated.state_equals(&bell, CompareMode::Exact).map_err(e2s)?, || format!("Bell d={d}"))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..1000 {
        let d = [2u32, 3, 5, 7][i % 4];
        let s = random_state::<CycloElem, _>(d, &["a", "b", "k"], 6, &mut rng).map_err(e2s)?;
        ensure(norm_is_one(&s), || "random state not normalised".into())?;
        let h = s.hadamard("a", i % 2 == 0).map_err(e2s)?;
        let c = h.controlled_shift("b", "k", ShiftDirection::Right).map_err(e2s)?;
        ensure(norm_is_one(&h) && norm_is_one(&c), || format!("norm changed, state {i}"))?;
        let back = c.controlled_shift("b", "k", ShiftDirection::Left).map_err(e2s)?;
        ensure(back.state_equals(&h, CompareMode::Exact).map_err(e2s)?, || "shift inverse".into())?;
    }

    let mut handoffs = 0;
    for d in [2u32, 3, 5, 7] {
        let key = random_key(d, 8, d as u64);
        let s = run_session::<CycloElem>(&ProtocolConfig::new(d, key), AdversaryStrategy::none()).map_err(e2s)?;
        for round in &s.rounds {
            let transit = round.stage("in_transit").ok_or("no in_transit stage")?;
            let rho = transit.reduced_density("k").map_err(e2s)?;
            ensure(rho.is_maximally_mixed(), || format!("d={d} round {}", round.index))?;
            handoffs += 1;
        }
    }
    Ok(format!("Fourier, Bell invariance, 1000 random states, {handoffs} hand-offs"))
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(e2s)?;
    let bin = env!("CARGO_BIN_EXE_qkdlab");
    let mut files = Vec::new();
    for (i, args) in [
        vec!["run", "--d", "3", "--rounds", "6", "--attack", "intercept", "--intercept-rounds", "2,4", "--seed", "42"],
        vec!["run", "--d", "5", "--rounds", "7", "--attack", "gao", "--announce", "odd", "--key-seed", "3", "--seed", "42"],
    ]
    .iter()
    .enumerate()
    {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let path = dir.path().join(format!("trace_{i}_{rep}.json"));
            let status = Command::new(bin)
                .args(args)
                .arg("--trace")
                .arg(&path)
                .output()
                .map_err(e2s)?
                .status;
            ensure(matches!(status.code(), Some(0 | 2)), || format!("exit {status}"))?;
            outputs.push(std::fs::read(&path).map_err(e2s)?);
        }
        ensure(outputs[0] == outputs[1], || format!("trace {i} differs between runs"))?;
        files.push(outputs[0].len());
    }
    let mut reports = Vec::new();
    for rep in 0..2 {
        let path = dir.path().join(format!("exp_{rep}.csv"));
        let status = Command::new(bin)
            .args(["experiment", "--attack", "intercept", "--d", "3", "--trials", "300", "--seed", "5", "--format", "csv", "--out"])
            .arg(&path)
            .output()
            .map_err(e2s)?
            .status;
        ensure(status.success(), || format!("experiment exit {status}"))?;
        reports.push(std::fs::read(&path).map_err(e2s)?);
    }
    ensure(reports[0] == reports[1], || "experiment reports differ".into())?;
    Ok(format!("byte-identical traces ({:?} bytes) and reports", files))
}

fn main() -> ExitCode {
    let corpus = gao_corpus();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("stage fidelity", Box::new(c1_stage_fidelity)),
        ("zero-QBER attack", Box::new(|| c2_zero_qber(corpus.as_ref().map_err(Clone::clone)?))),
        ("observation law", Box::new(|| c3_observation_law(corpus.as_ref().map_err(Clone::clone)?))),
        ("period-4 recurrence", Box::new(c4_recurrence)),
        ("inference", Box::new(c5_inference)),
        ("knowledge fraction", Box::new(c6_known_fraction)),
        ("intercept-resend QBER", Box::new(c7_intercept_qber)),
        ("no information from intercept", Box::new(c8_no_information)),
        ("engine properties", Box::new(c9_engine)),
        ("determinism", Box::new(c10_determinism)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = check();
        let t = started.elapsed();
        match outcome {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail}) [{t:.2?}]", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({why}) [{t:.2?}]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
