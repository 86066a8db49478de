//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the lines are always shown:
//! `cargo test -p tlcqsc-cli --test acceptance`.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use tlcqsc::check::exhaustive::{exhaustive_safety, replay, ExhaustiveConfig, Verdict};
use tlcqsc::check::{check_all, Property};
use tlcqsc::{
    run, AdversaryKind, CommitRule, DelaySchedule, EndStatus, EventBody, NodeId, RecordId,
    RunConfig, Trace,
};
use tlcqsc_cli::output::{write_csv, write_json};
use tlcqsc_cli::stats::{at_least, at_most};
use tlcqsc_cli::{run_experiment, run_experiment_with, AdversarySpec, ExperimentConfig};

const ALPHA: f64 = 0.01;
const SAFETY: [Property; 3] = [
    Property::CommitSafety,
    Property::PrefixConsistency,
    Property::Irrevocability,
];

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

/// Every trace produced by the criteria, for the property-suite criterion.
#[derive(Default)]
struct CheckTally {
    traces: u64,
    violations: Vec<String>,
}

impl CheckTally {
    fn record(&mut self, label: &str, trace: &Trace) {
        self.traces += 1;
        match check_all(trace) {
            Ok(v) => self
                .violations
                .extend(v.iter().map(|v| format!("{label}: {v}"))),
            Err(e) => self.violations.push(format!("{label}: {e}")),
        }
    }
}

fn within(elapsed: Duration, budget: Duration) -> (bool, String) {
    (
        elapsed < budget,
        format!("{:.2}s of {}s", elapsed.as_secs_f64(), budget.as_secs()),
    )
}

fn baseline() -> ExperimentConfig {
    ExperimentConfig {
        nodes: 3,
        tm: 2,
        tw: 2,
        fd: 0,
        rounds: 1000,
        runs: 20,
        seed: 0,
        adversary: AdversarySpec::Oblivious,
        encrypt_tickets: true,
        check: true,
        ..ExperimentConfig::default()
    }
}

fn commit_probability(tally: &mut CheckTally) -> (Outcome, Outcome) {
    // The budget covers simulation only; checking is a separate, untimed pass
    // that must reproduce the same report.
    let cfg = ExperimentConfig {
        check: false,
        ..baseline()
    };
    let start = Instant::now();
    let result = run_experiment(&cfg);
    let (fast, time) = within(start.elapsed(), Duration::from_secs(10));
    let checked = run_experiment(&baseline());
    tally.traces += cfg.runs;
    let report = match (result, checked) {
        (Ok(r), Ok(c)) if r.summary == c.summary => r,
        (Ok(_), Ok(_)) => {
            let fail = || Outcome::new(false, "checked rerun disagrees");
            return (fail(), fail());
        }
        (Err(e), _) | (_, Err(e)) => {
            tally.violations.push(format!("baseline: {e}"));
            let fail = || Outcome::new(false, e.to_string());
            return (fail(), fail());
        }
    };
    let s = &report.summary;
    let trials = s.observed_rounds;
    let tests: Vec<_> = s
        .commits
        .iter()
        .map(|&c| at_least(c, trials, 0.5))
        .collect();
    let rates: Vec<String> = tests
        .iter()
        .map(|t| format!("{:.3} (p={:.3})", t.rate(), t.p_value))
        .collect();
    let commit = Outcome::new(
        fast && s.truncated_runs == 0 && tests.iter().all(|t| t.passes(ALPHA)),
        format!("per-node rates {}; {time}", rates.join(", ")),
    );

    const K: usize = 5;
    let streaks: u64 = s.streak_histogram.iter().skip(K).sum();
    let windows = s.runs * s.nodes as u64 * (s.rounds - (K as u64 - 1));
    let t = at_most(streaks, windows, 1.0 / 32.0);
    let streak = Outcome::new(
        t.passes(ALPHA),
        format!(
            "{streaks} of {windows} five-round windows failed throughout ({:.5}, p={:.3})",
            t.rate(),
            t.p_value
        ),
    );
    (commit, streak)
}

fn ticket_aware(tally: &mut CheckTally) -> Outcome {
    let start = Instant::now();
    let mut exps = Vec::new();
    for encrypt_tickets in [false, true] {
        let cfg = ExperimentConfig {
            rounds: 200,
            runs: 1,
            adversary: AdversarySpec::TicketAware,
            encrypt_tickets,
            ..baseline()
        };
        match run_experiment_with(&cfg, true) {
            Ok(e) => {
                tally.record("ticket-aware", e.first_trace.as_ref().expect("kept"));
                exps.push(e);
            }
            Err(e) => return Outcome::new(false, e.to_string()),
        }
    }
    let (fast, time) = within(start.elapsed(), Duration::from_secs(5));
    let plain = &exps[0].report.summary;
    let sealed = &exps[1].report.summary;
    let plain_commits: u64 = plain.commits.iter().sum();
    let sealed_ok = sealed
        .commits
        .iter()
        .all(|&c| at_least(c, sealed.observed_rounds, 0.5).passes(ALPHA));
    Outcome::new(
        fast && plain_commits == 0 && sealed_ok && plain.truncated_runs == 0,
        format!(
            "plaintext commits {plain_commits}; sealed rates {:?}; {time}",
            sealed.commit_rate
        ),
    )
}

fn randomized_safety(tally: &mut CheckTally) -> Outcome {
    const SEEDS: u64 = 10_000;
    let start = Instant::now();
    type Found = Vec<(Property, String)>;
    let results: Vec<Result<(u64, Found), String>> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let mut cfg = RunConfig::consensus(3, 2, 1, 3, seed).map_err(|e| e.to_string())?;
            cfg.sim.adversary = AdversaryKind::DelaySet {
                schedule: DelaySchedule::Rotating {
                    period: 64,
                    size: 1,
                },
            };
            let out = run(&cfg).map_err(|e| format!("seed {seed}: {e}"))?;
            let v = check_all(&out.trace).map_err(|e| format!("seed {seed}: {e}"))?;
            let commits = out.views.iter().flatten().filter(|v| v.committed).count() as u64;
            let found = v
                .iter()
                .map(|v| (v.property, format!("seed {seed}: {v}")))
                .collect();
            Ok((commits, found))
        })
        .collect();
    let (fast, time) = within(start.elapsed(), Duration::from_secs(60));
    let mut commits = 0;
    let mut safety = 0;
    for r in results {
        tally.traces += 1;
        match r {
            Ok((c, v)) => {
                commits += c;
                safety += v.iter().filter(|(p, _)| SAFETY.contains(p)).count();
                tally.violations.extend(v.into_iter().map(|(_, v)| v));
            }
            Err(e) => {
                tally.violations.push(e.clone());
                return Outcome::new(false, e);
            }
        }
    }
    Outcome::new(
        fast && safety == 0 && commits > 0,
        format!("{SEEDS} seeds, {commits} node-round commits, {safety} safety violations; {time}"),
    )
}

fn exhaustive() -> Outcome {
    let start = Instant::now();
    let cfg = ExhaustiveConfig::new(3, 2, 2, 1);
    let safe = match exhaustive_safety(&cfg) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, e.to_string()),
    };
    let mutant_cfg = ExhaustiveConfig::new(3, 2, 2, 1).with_rule(CommitRule::ConfirmOnly);
    let mutant = match exhaustive_safety(&mutant_cfg) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, e.to_string()),
    };
    let (fast, time) = within(start.elapsed(), Duration::from_secs(120));
    // The counterexample must break the real nodes when replayed.
    let replayed = match &mutant.verdict {
        Verdict::Unsafe(cex) => replay(&mutant_cfg, &cex.schedule).is_ok_and(|nodes| {
            let views: Vec<_> = nodes
                .iter()
                .filter_map(|n| n.qsc().view(cex.round))
                .collect();
            views
                .iter()
                .any(|c| c.committed && views.iter().any(|v| v.best != c.best))
        }),
        _ => false,
    };
    Outcome::new(
        fast && safe.verdict.is_safe() && replayed,
        format!(
            "{} states explored, verdict {}; mutant {} with replayable counterexample: {replayed}; {time}",
            safe.states,
            verdict_name(&safe.verdict),
            verdict_name(&mutant.verdict),
        ),
    )
}

fn verdict_name(v: &Verdict) -> &'static str {
    match v {
        Verdict::Safe => "safe",
        Verdict::Unsafe(_) => "unsafe",
        Verdict::Inconclusive { .. } => "inconclusive",
    }
}

fn clock_under_delay(n: usize, t: usize, delayed: &[u32], max_step: u64) -> RunConfig {
    let mut cfg = RunConfig::clock_only(n, t, t, delayed.len(), max_step, 1).expect("valid");
    cfg.sim.adversary = AdversaryKind::DelaySet {
        schedule: DelaySchedule::Fixed(delayed.iter().copied().map(NodeId).collect()),
    };
    cfg
}

fn liveness(tally: &mut CheckTally) -> Outcome {
    let live = match run(&clock_under_delay(5, 3, &[3, 4], 50)) {
        Ok(o) => o,
        Err(e) => return Outcome::new(false, e.to_string()),
    };
    tally.record("liveness", &live.trace);
    let live_steps: Vec<u64> = live.steps[..3].to_vec();
    let progressed = live.status == EndStatus::Quiescent && live_steps.iter().all(|&s| s >= 50);

    let stalled = match run(&clock_under_delay(5, 3, &[2, 3, 4], 50)) {
        Ok(o) => o,
        Err(e) => return Outcome::new(false, e.to_string()),
    };
    let flagged: Vec<Property> = check_all(&stalled.trace)
        .map(|v| v.into_iter().map(|v| v.property).collect())
        .unwrap_or_default();
    let quiet = stalled.status == EndStatus::Quiescent && flagged.is_empty();
    Outcome::new(
        progressed && quiet,
        format!(
            "f_d=2 live steps {live_steps:?}; f_d=3 ended {:?} at steps {:?} with {} violations",
            stalled.status,
            &stalled.steps[..2],
            flagged.len()
        ),
    )
}

fn determinism() -> Outcome {
    let mut configs = vec![
        RunConfig::consensus(3, 2, 0, 5, 11).expect("valid"),
        RunConfig::consensus(4, 3, 0, 5, 12)
            .expect("valid")
            .with_pipeline(true),
        RunConfig::clock_only(5, 3, 3, 2, 20, 13).expect("valid"),
    ];
    configs[2].sim.adversary = AdversaryKind::DelaySet {
        schedule: DelaySchedule::Rotating {
            period: 10,
            size: 2,
        },
    };
    let mut ticket = RunConfig::consensus(3, 2, 0, 5, 14).expect("valid");
    ticket.sim.adversary = AdversaryKind::TicketAware;
    ticket.qsc.encrypt_tickets = false;
    configs.push(ticket);

    let bytes = |cfg: &RunConfig| -> Vec<u8> {
        let mut buf = Vec::new();
        run(cfg)
            .expect("run")
            .trace
            .write_ndjson(&mut buf)
            .expect("write");
        buf
    };
    let traces_equal = configs.iter().all(|c| bytes(c) == bytes(c));

    let exp = ExperimentConfig {
        rounds: 30,
        runs: 3,
        seed: 5,
        ..baseline()
    };
    let outputs = || -> (Vec<u8>, Vec<u8>) {
        let report = run_experiment(&exp).expect("experiment");
        let (mut csv, mut json) = (Vec::new(), Vec::new());
        write_csv(&report.rows, &mut csv).expect("csv");
        write_json(&report, &mut json).expect("json");
        (csv, json)
    };
    let outputs_equal = outputs() == outputs();
    Outcome::new(
        traces_equal && outputs_equal,
        format!(
            "{} trace configs identical: {traces_equal}; CSV and JSON identical: {outputs_equal}",
            configs.len()
        ),
    )
}

fn pipelining(tally: &mut CheckTally) -> Outcome {
    let cfg = |pipeline| ExperimentConfig {
        rounds: 200,
        runs: 5,
        pipeline,
        ..baseline()
    };
    let (piped, seq) = match (
        run_experiment_with(&cfg(true), true),
        run_experiment(&cfg(false)),
    ) {
        (Ok(p), Ok(s)) => (p, s),
        (Err(e), _) | (_, Err(e)) => {
            tally.violations.push(format!("pipelining: {e}"));
            return Outcome::new(false, e.to_string());
        }
    };
    tally.traces += 10;
    let chains_equal = piped
        .runs
        .iter()
        .all(|r| r.chains.iter().all(|c| *c == r.chains[0]));
    let blocks: Vec<usize> = piped.runs.iter().map(|r| r.chains[0].len()).collect();
    let (p, s) = (
        &piped.report.summary.msgs_per_step,
        &seq.summary.msgs_per_step,
    );
    let deltas = [p.raw - s.raw, p.ack - s.ack, p.cert - s.cert];
    let close = deltas.iter().all(|d| d.abs() <= 1.0);
    Outcome::new(
        chains_equal && close && piped.report.summary.truncated_runs == 0,
        format!(
            "chains identical across nodes: {chains_equal} (lengths {blocks:?}); \
             per-step raw/ack/cert {:.2}/{:.2}/{:.2} vs sequential {:.2}/{:.2}/{:.2}",
            p.raw, p.ack, p.cert, s.raw, s.ack, s.cert
        ),
    )
}

// Mutant traces: each must be flagged by the property it targets.

fn committed_trace() -> Trace {
    (0..)
        .map(|seed| run(&RunConfig::consensus(3, 2, 0, 2, seed).expect("valid")).expect("run"))
        .find(|o| o.views.iter().flatten().all(|v| v.committed))
        .expect("some seed commits everywhere")
        .trace
}

fn rebuild(events: Vec<EventBody>) -> Trace {
    let mut t = Trace::new();
    for body in events {
        t.push(body);
    }
    t
}

fn mutants(clean: &Trace) -> Vec<(Property, Trace)> {
    let bodies = || -> Vec<EventBody> { clean.events.iter().map(|e| e.body.clone()).collect() };
    let find = |pred: &dyn Fn(&EventBody) -> bool| {
        clean
            .events
            .iter()
            .position(|e| pred(&e.body))
            .expect("event present")
    };
    let mut out = Vec::new();

    // A node steps back from 3 to 2.
    let i = find(&|b| matches!(b, EventBody::Advance { to_step: 3, .. }));
    let mut m = bodies();
    if let EventBody::Advance { node, .. } = m[i].clone() {
        m.insert(
            i + 1,
            EventBody::Advance {
                node,
                from_step: 3,
                to_step: 2,
                via: tlcqsc::Via::Threshold,
            },
        );
    }
    out.push((Property::Monotonicity, rebuild(m)));

    // A node skips from step 0 to step 3 with no evidence.
    let i = find(&|b| matches!(b, EventBody::Advance { to_step: 1, .. }));
    let mut m = bodies();
    if let EventBody::Advance { to_step, .. } = &mut m[i] {
        *to_step = 3;
    }
    out.push((Property::Pacing, rebuild(m)));

    // An ack for a step-1 raw claims step 0.
    let i = find(&|b| matches!(b, EventBody::Ack { step: 1, .. }));
    let mut m = bodies();
    if let EventBody::Ack { step, .. } = &mut m[i] {
        *step = 0;
    }
    out.push((Property::Witnessing, rebuild(m)));

    // A cert lists fewer ackers than the witness threshold.
    let i = find(&|b| matches!(b, EventBody::Cert { .. }));
    let mut m = bodies();
    if let EventBody::Cert { ackers, .. } = &mut m[i] {
        ackers.truncate(1);
    }
    out.push((Property::Certification, rebuild(m)));

    // The first advance jumps to step 4 and broadcasts there.
    let i = find(&|b| matches!(b, EventBody::Advance { to_step: 1, .. }));
    let mut m = bodies();
    if let EventBody::Advance { to_step, .. } = &mut m[i] {
        *to_step = 4;
    }
    if let Some(j) = (i..m.len()).find(|&j| matches!(m[j], EventBody::Raw { step: 1, .. })) {
        if let EventBody::Raw { step, .. } = &mut m[j] {
            *step = 4;
        }
    }
    out.push((Property::PeriodBound1, rebuild(m)));

    // The step-2 cert over the latest raw is relabelled as step 1.
    let raw_at = |of: RecordId| {
        find(&|b| matches!(b, EventBody::Raw { from, seq, .. } if RecordId::new(*from, *seq) == of))
    };
    let i = (0..clean.events.len())
        .filter_map(|i| match clean.events[i].body {
            EventBody::Cert { step: 2, of, .. } => Some((raw_at(of), i)),
            _ => None,
        })
        .max()
        .expect("a step-2 cert")
        .1;
    let mut m = bodies();
    if let EventBody::Cert { step, .. } = &mut m[i] {
        *step = 1;
    }
    out.push((Property::PeriodBound2, rebuild(m)));

    // Node 1 never hears from node 0.
    let mut m = bodies();
    m.retain(|b| {
        !matches!(b, EventBody::Deliver { from, to, .. } if *from == NodeId(0) && *to == NodeId(1))
    });
    out.push((Property::TwoStepBroadcast, rebuild(m)));
    out
}

fn property_suite(tally: &CheckTally) -> Outcome {
    let clean = committed_trace();
    let mut missed = Vec::new();
    let cases = mutants(&clean);
    for (p, t) in &cases {
        let found: BTreeSet<Property> = check_all(t)
            .map(|v| v.into_iter().map(|v| v.property).collect())
            .unwrap_or_default();
        if !found.contains(p) {
            missed.push(p.to_string());
        }
    }
    let mut detail = format!(
        "{} traces checked, {} violations; {} of {} mutants flagged",
        tally.traces,
        tally.violations.len(),
        cases.len() - missed.len(),
        cases.len()
    );
    if let Some(v) = tally.violations.first() {
        detail.push_str(&format!("; first violation: {v}"));
    }
    if !missed.is_empty() {
        detail.push_str(&format!("; missed {missed:?}"));
    }
    Outcome::new(tally.violations.is_empty() && missed.is_empty(), detail)
}

fn main() -> ExitCode {
    // Honor `cargo test -- --list` and filters without running anything.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let mut tally = CheckTally::default();
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let (commit, streak) = commit_probability(&mut tally);
    results.push(("commit probability", commit));
    results.push(("failure streaks", streak));
    results.push(("adversary zero-success", ticket_aware(&mut tally)));
    results.push(("safety, randomized", randomized_safety(&mut tally)));
    results.push(("safety, exhaustive", exhaustive()));
    results.push(("liveness under delay", liveness(&mut tally)));
    results.push(("determinism", determinism()));
    results.push(("pipelining equivalence", pipelining(&mut tally)));
    let suite = property_suite(&tally);
    results.insert(5, ("clock property suite", suite));

    let mut failed = 0;
    for (name, o) in &results {
        let mark = if o.pass { "PASS" } else { "FAIL" };
        println!("{mark} {name}: {}", o.detail);
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
