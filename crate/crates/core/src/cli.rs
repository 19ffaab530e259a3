//! Command-line front end: `run`, `verify-paper` and `experiment`.
//!
//! Exit codes: 0 success, 1 runtime error, 2 detection triggered (`run`),
//! 3 closed-form mismatch (`verify-paper`), 64 usage error.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::adversary::{AdversaryStrategy, AttackKind};
use crate::analysis::{compute_metrics, monte_carlo, ExperimentConfig, ExperimentReport};
use crate::closed_form::{verify_stages, VerifyReport};
use crate::protocol::{
    random_key, run_session, AnnouncePolicy, ArithmeticMode, ProtocolConfig, SessionTranscript,
};
use crate::ring::{is_prime, rational_string, rational_to_f64, Amplitude, ComplexF, CycloElem};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_DETECTED: i32 = 2;
pub const EXIT_MISMATCH: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "qkdlab", version, about = "Entanglement-reuse QKD simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one session and print its metrics.
    Run(RunArgs),
    /// Check every stage of a five-round attacked session against its closed form.
    VerifyPaper(VerifyArgs),
    /// Monte-Carlo experiment, with exact enumeration where available.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AttackArg {
    None,
    Intercept,
    Gao,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Exact,
    Float,
}

impl From<ModeArg> for ArithmeticMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Exact => ArithmeticMode::Exact,
            ModeArg::Float => ArithmeticMode::Float,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct KeyArgs {
    /// Key dits, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "key_seed")]
    pub key: Option<Vec<u32>>,
    /// Draw a uniform key from this seed.
    #[arg(long)]
    pub key_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, default_value_t = 3)]
    pub d: u32,
    /// Defaults to the key length, or 5 for a drawn key.
    #[arg(long)]
    pub rounds: Option<usize>,
    #[command(flatten)]
    pub key: KeyArgs,
    #[arg(long, value_enum, default_value_t = AttackArg::None)]
    pub attack: AttackArg,
    /// Rounds intercepted by `--attack intercept` (default 1).
    #[arg(long, value_delimiter = ',')]
    pub intercept_rounds: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value_t = ModeArg::Exact)]
    pub mode: ModeArg,
    /// Round indices to announce, or odd, even, none.
    #[arg(long, default_value = "none")]
    pub announce: String,
    /// Keep announced dits in the key.
    #[arg(long)]
    pub keep_announced: bool,
    /// Write the stage-labelled transcript as JSON.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Text)]
    pub format: FormatArg,
    #[arg(long, env = "QKDLAB_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 3)]
    pub d: u32,
    #[command(flatten)]
    pub key: KeyArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::Exact)]
    pub mode: ModeArg,
    /// Write the attacked five-round transcript as JSON.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Text)]
    pub format: FormatArg,
    #[arg(long, env = "QKDLAB_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// One or more dimensions, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "3")]
    pub d: Vec<u32>,
    /// Defaults to one past the last intercepted round, or 5.
    #[arg(long)]
    pub rounds: Option<usize>,
    /// One or more strategies, comma separated.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "none")]
    pub attack: Vec<AttackArg>,
    #[arg(long, value_delimiter = ',')]
    pub intercept_rounds: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value_t = ModeArg::Exact)]
    pub mode: ModeArg,
    #[arg(long, default_value = "none")]
    pub announce: String,
    #[arg(long, default_value_t = 1000)]
    pub trials: u64,
    /// Report destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    pub format: FormatArg,
    #[arg(long, env = "QKDLAB_SEED", default_value_t = 0)]
    pub seed: u64,
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<crate::Error> for Failure {
    fn from(e: crate::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn usage<T>(msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Usage(msg.into()))
}

/// Parses `args` (program name first) and runs the command.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    match &cli.command {
        Command::Run(a) => cmd_run(a, out, err),
        Command::VerifyPaper(a) => cmd_verify_paper(a, out, err),
        Command::Experiment(a) => cmd_experiment(a, out, err),
    }
}

fn finish(result: Result<i32, Failure>, err: &mut dyn Write) -> i32 {
    match result {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            let _ = writeln!(err, "error: {e:#}");
            EXIT_ERROR
        }
    }
}

fn check_dim(d: u32, mode: ModeArg) -> Result<(), Failure> {
    if d < 2 {
        return usage(format!("--d must be at least 2, got {d}"));
    }
    if mode == ModeArg::Exact && !is_prime(d) {
        return usage(format!(
            "--mode exact requires a prime --d, got {d} (use --mode float)"
        ));
    }
    Ok(())
}

fn resolve_key(key: &KeyArgs, d: u32, rounds: Option<usize>, seed: u64, default_len: usize) -> Result<Vec<u32>, Failure> {
    let key = match &key.key {
        Some(k) => {
            if let Some(n) = rounds.filter(|&n| n != k.len()) {
                return usage(format!("--key has {} dits but --rounds is {n}", k.len()));
            }
            k.clone()
        }
        None => random_key(d, rounds.unwrap_or(default_len), key.key_seed.unwrap_or(seed)),
    };
    if key.is_empty() {
        return usage("the key must contain at least one dit");
    }
    if let Some(&v) = key.iter().find(|&&v| v >= d) {
        return usage(format!("key dit {v} is out of range for d = {d}"));
    }
    Ok(key)
}

fn attack_kind(attack: AttackArg, intercept_rounds: &Option<Vec<usize>>, rounds: usize) -> Result<AttackKind, Failure> {
    if attack != AttackArg::Intercept && intercept_rounds.is_some() {
        return usage("--intercept-rounds requires --attack intercept");
    }
    Ok(match attack {
        AttackArg::None => AttackKind::None,
        AttackArg::Gao => AttackKind::Gao,
        AttackArg::Intercept => {
            let set: BTreeSet<usize> = intercept_rounds
                .clone()
                .unwrap_or_else(|| vec![1])
                .into_iter()
                .collect();
            if let Some(&r) = set.iter().find(|&&r| r == 0 || r > rounds) {
                return usage(format!("intercept round {r} is outside 1..={rounds}"));
            }
            AttackKind::InterceptResend { attack_rounds: set }
        }
    })
}

fn announce_indices(spec: &str, rounds: usize) -> Result<Vec<usize>, Failure> {
    let policy: AnnouncePolicy = spec
        .parse()
        .map_err(|e: crate::Error| Failure::Usage(e.to_string()))?;
    let indices = policy.indices(rounds);
    if let Some(&i) = indices.iter().find(|&&i| i == 0 || i > rounds) {
        return usage(format!("announced round {i} is outside 1..={rounds}"));
    }
    Ok(indices)
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::Runtime)
}

fn to_json_string(value: &impl serde::Serialize) -> Result<String, Failure> {
    let mut s = serde_json::to_string_pretty(value).context("serializing output")?;
    s.push('\n');
    Ok(s)
}

fn list(values: impl IntoIterator<Item = impl ToString>) -> String {
    let v: Vec<String> = values.into_iter().map(|x| x.to_string()).collect();
    format!("[{}]", v.join(","))
}

pub fn cmd_run(args: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    finish(run_impl(args, out), err)
}

fn run_impl(args: &RunArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    check_dim(args.d, args.mode)?;
    let key = resolve_key(&args.key, args.d, args.rounds, args.seed, 5)?;
    let rounds = key.len();
    let attack = attack_kind(args.attack, &args.intercept_rounds, rounds)?;
    let announce = announce_indices(&args.announce, rounds)?;
    let config = ProtocolConfig::new(args.d, key)
        .with_seed(args.seed)
        .with_mode(args.mode.into())
        .with_discard(!args.keep_announced);
    match args.mode {
        ModeArg::Exact => run_typed::<CycloElem>(args, &config, attack, &announce, out),
        ModeArg::Float => run_typed::<ComplexF>(args, &config, attack, &announce, out),
    }
}

fn run_typed<A: Amplitude>(
    args: &RunArgs,
    config: &ProtocolConfig,
    attack: AttackKind,
    announce: &[usize],
    out: &mut dyn Write,
) -> Result<i32, Failure> {
    let mut session: SessionTranscript<A> = run_session(config, AdversaryStrategy::new(attack))?;
    session.announce_subsequence(announce)?;
    let metrics = compute_metrics(&session, &config.key)?;
    if let Some(path) = &args.trace {
        write_file(path, &to_json_string(&session.to_json()?)?)?;
    }
    let observations: Vec<u32> = session.observations.iter().map(|o| o.value).collect();
    match args.format {
        FormatArg::Text => {
            writeln!(
                out,
                "d={} rounds={} attack={} mode={} seed={}",
                config.dim,
                config.num_rounds,
                session.attack.name(),
                config.arithmetic_mode,
                config.rng_seed
            )?;
            writeln!(out, "key:                 {}", list(&config.key))?;
            writeln!(out, "bob_outcomes:        {}", list(session.bob_outcomes()))?;
            writeln!(out, "announced:           {}", list(announce))?;
            writeln!(
                out,
                "qber:                {} ({:.6})",
                rational_string(&metrics.qber_overall),
                rational_to_f64(&metrics.qber_overall)
            )?;
            writeln!(out, "detection_triggered: {}", metrics.detection_triggered)?;
            writeln!(out, "eve_observations:    {}", list(&observations))?;
            writeln!(out, "eve_candidates:      {}", metrics.eve_candidate_count)?;
            writeln!(
                out,
                "eve_known_fraction:  {} ({:.6})",
                rational_string(&metrics.eve_known_fraction),
                rational_to_f64(&metrics.eve_known_fraction)
            )?;
        }
        FormatArg::Json => {
            let doc = serde_json::json!({
                "metrics": metrics,
                "bob_outcomes": session.bob_outcomes(),
                "eve_observations": observations,
            });
            write!(out, "{}", to_json_string(&doc)?)?;
        }
        FormatArg::Csv => {
            writeln!(
                out,
                "d,rounds,attack,mode,seed,qber,detection_triggered,eve_observations,eve_candidates,eve_known_fraction"
            )?;
            writeln!(
                out,
                "{},{},{},{},{},{},{},\"{}\",{},{}",
                config.dim,
                config.num_rounds,
                session.attack.name(),
                config.arithmetic_mode,
                config.rng_seed,
                rational_string(&metrics.qber_overall),
                metrics.detection_triggered,
                list(&observations),
                metrics.eve_candidate_count,
                rational_string(&metrics.eve_known_fraction)
            )?;
        }
    }
    Ok(if metrics.detection_triggered {
        EXIT_DETECTED
    } else {
        EXIT_OK
    })
}

pub fn cmd_verify_paper(args: &VerifyArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    finish(verify_impl(args, out), err)
}

fn verify_impl(args: &VerifyArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    if !is_prime(args.d) {
        return usage(format!("verify-paper requires a prime --d, got {}", args.d));
    }
    let key = resolve_key(&args.key, args.d, None, args.seed, 5)?;
    if key.len() < 5 {
        return usage(format!("verify-paper needs at least 5 key dits, got {}", key.len()));
    }
    let report = match args.mode {
        ModeArg::Exact => verify_stages::<CycloElem>(args.d, &key)?,
        ModeArg::Float => verify_stages::<ComplexF>(args.d, &key)?,
    };
    if let Some(path) = &args.trace {
        let config = ProtocolConfig::new(args.d, key[..5].to_vec()).with_mode(args.mode.into());
        let json = match args.mode {
            ModeArg::Exact => run_session::<CycloElem>(&config, AdversaryStrategy::gao())?.to_json()?,
            ModeArg::Float => run_session::<ComplexF>(&config, AdversaryStrategy::gao())?.to_json()?,
        };
        write_file(path, &to_json_string(&json)?)?;
    }
    match args.format {
        FormatArg::Json => write!(out, "{}", to_json_string(&report)?)?,
        FormatArg::Csv => {
            writeln!(out, "round,label,passed,max_deviation")?;
            for c in report.checks.iter().chain(std::iter::once(&report.recurrence)) {
                writeln!(out, "{},{},{},{:e}", c.round, c.label, c.passed, c.max_deviation)?;
            }
        }
        FormatArg::Text => print_verify_table(&report, out)?,
    }
    if report.all_passed() {
        Ok(EXIT_OK)
    } else {
        if let Some(f) = report.first_failure() {
            writeln!(
                out,
                "first mismatch: round {} {}: {}",
                f.round,
                f.label,
                f.first_difference.as_deref().unwrap_or("?")
            )?;
        }
        Ok(EXIT_MISMATCH)
    }
}

fn print_verify_table(report: &VerifyReport, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(
        out,
        "d={} key={} mode={}",
        report.dim,
        list(&report.key),
        report.mode
    )?;
    writeln!(out, "{:<5} {:<10} {:<6} {:<10} formula", "round", "stage", "result", "max_dev")?;
    for c in report.checks.iter().chain(std::iter::once(&report.recurrence)) {
        writeln!(
            out,
            "{:<5} {:<10} {:<6} {:<10.1e} {}",
            c.round,
            c.label,
            if c.passed { "PASS" } else { "FAIL" },
            c.max_deviation,
            c.formula
        )?;
    }
    let passed = report.checks.iter().filter(|c| c.passed).count();
    writeln!(
        out,
        "{passed}/{} stage checks passed, recurrence {}",
        report.checks.len(),
        if report.recurrence.passed { "PASS" } else { "FAIL" }
    )
}

pub fn cmd_experiment(args: &ExperimentArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    finish(experiment_impl(args, out), err)
}

fn experiment_impl(args: &ExperimentArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    if args.trials == 0 {
        return usage("--trials must be at least 1");
    }
    if args.format == FormatArg::Text {
        return usage("experiment reports are written as json or csv");
    }
    for &d in &args.d {
        check_dim(d, args.mode)?;
    }
    if args.intercept_rounds.is_some() && !args.attack.contains(&AttackArg::Intercept) {
        return usage("--intercept-rounds requires --attack intercept");
    }
    let last_intercept = args
        .intercept_rounds
        .as_ref()
        .and_then(|r| r.iter().max().copied())
        .unwrap_or(1);
    let rounds = args.rounds.unwrap_or(if args.attack.contains(&AttackArg::Intercept) {
        last_intercept + 1
    } else {
        5
    });
    if rounds == 0 {
        return usage("--rounds must be at least 1");
    }
    let announce = announce_indices(&args.announce, rounds)?;
    let mut entries = Vec::new();
    for &attack in &args.attack {
        let intercept = (attack == AttackArg::Intercept)
            .then(|| args.intercept_rounds.clone())
            .flatten();
        let kind = attack_kind(attack, &intercept, rounds)?;
        for &d in &args.d {
            let mut config = ExperimentConfig::new(d, rounds).with_mode(args.mode.into());
            config.announce = announce.clone();
            entries.extend(monte_carlo(&config, &kind, args.trials, args.seed)?.entries);
        }
    }
    let report = ExperimentReport::new(entries);
    let body = match args.format {
        FormatArg::Csv => report.to_csv(),
        _ => to_json_string(&report)?,
    };
    match &args.out {
        Some(path) => {
            write_file(path, &body)?;
            for e in &report.entries {
                write!(
                    out,
                    "{} d={} trials={} qber={:.6} [{:.6}, {:.6}]",
                    e.strategy, e.config.dim, e.trials, e.qber.mean, e.qber.lower, e.qber.upper
                )?;
                if let Some(x) = &e.exact {
                    write!(
                        out,
                        " round{}_error exact={} mc={:.6} within_3sigma={}",
                        x.round, x.value, x.estimate.mean, x.within_3sigma
                    )?;
                }
                writeln!(out)?;
            }
        }
        None => write!(out, "{body}")?,
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run_cli(
            std::iter::once("qkdlab").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn gao_run_prints_observations() {
        let (code, out, _) = run(&[
            "run", "--d", "3", "--rounds", "5", "--key", "1,0,2,1,2", "--attack", "gao", "--mode", "exact",
        ]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("eve_observations:    [0,1]"), "{out}");
        assert!(out.contains("qber:                0/1"), "{out}");
    }

    #[test]
    fn usage_errors() {
        assert_eq!(run(&["run", "--d", "4", "--mode", "exact"]).0, EXIT_USAGE);
        assert_eq!(run(&["run", "--key", "1,2", "--key-seed", "3"]).0, EXIT_USAGE);
        assert_eq!(run(&["run", "--key", "1,5"]).0, EXIT_USAGE);
        assert_eq!(run(&["run", "--key", "1,2", "--rounds", "3"]).0, EXIT_USAGE);
        assert_eq!(run(&["run", "--intercept-rounds", "1"]).0, EXIT_USAGE);
        assert_eq!(run(&["run", "--announce", "9"]).0, EXIT_USAGE);
        assert_eq!(run(&["bogus"]).0, EXIT_USAGE);
        assert_eq!(run(&["verify-paper", "--key", "1,2"]).0, EXIT_USAGE);
        assert_eq!(run(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn composite_dimension_runs_in_float_mode() {
        let (code, out, _) = run(&["run", "--d", "4", "--mode", "float", "--attack", "gao", "--key-seed", "2"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("qber:                0/1"));
    }

    #[test]
    fn detection_exit_code() {
        // the round after an interception is wrong with probability 2/3
        let caught = (0..20).any(|seed| {
            let seed = seed.to_string();
            run(&[
                "run", "--d", "3", "--rounds", "4", "--attack", "intercept", "--announce", "1,2,3,4", "--seed", &seed,
            ])
            .0 == EXIT_DETECTED
        });
        assert!(caught);
    }

    #[test]
    fn verify_table() {
        let (code, out, _) = run(&["verify-paper", "--d", "3", "--key", "1,0,2,1,2"]);
        assert_eq!(code, EXIT_OK, "{out}");
        assert!(out.contains("32/32 stage checks passed, recurrence PASS"));
    }

    #[test]
    fn experiment_csv() {
        let (code, out, _) = run(&[
            "experiment", "--attack", "none,gao", "--d", "2,3", "--trials", "5", "--format", "csv",
        ]);
        assert_eq!(code, EXIT_OK);
        assert_eq!(out.lines().count(), 5);
    }
}
