//! Batch Monte Carlo runs and their aggregation.

use std::env;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tlcqsc::check::{check_all, CheckError, Violation};
use tlcqsc::{run, ConfigError, EndStatus, EventBody, QscConfig, Round, SimError, Trace};

use crate::config::ExperimentConfig;
use crate::stats;

/// Environment variable capping the number of worker threads.
pub const THREADS_VAR: &str = "TLCQSC_THREADS";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("run {run} (seed {seed}) failed: {source}")]
    Sim {
        run: u64,
        seed: u64,
        #[source]
        source: SimError,
    },
    #[error("run {run} (seed {seed}) violates {} propert{}", violations.len(), if violations.len() == 1 { "y" } else { "ies" })]
    Violation {
        run: u64,
        seed: u64,
        violations: Vec<Violation>,
    },
    #[error("trace check failed: {0}")]
    Check(#[from] CheckError),
    #[error("{THREADS_VAR}: {0}")]
    Threads(String),
}

/// What one simulation contributes to the summary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunData {
    pub run: u64,
    pub seed: u64,
    pub truncated: bool,
    /// `committed[node][round]`; rounds a node never resolved count as not
    /// committed.
    pub committed: Vec<Vec<bool>>,
    /// `msgs[node][step]` as `[raw, ack, cert]` counts sent by the node.
    pub msgs: Vec<Vec<[u64; 3]>>,
    /// Hashes of each node's finalized chain, oldest first.
    pub chains: Vec<Vec<String>>,
}

impl RunData {
    pub fn from_trace(run: u64, trace: &Trace, n: usize, rounds: Round, max_step: u64) -> Self {
        let mut committed = vec![vec![false; rounds as usize]; n];
        let mut msgs = vec![vec![[0u64; 3]; max_step as usize + 1]; n];
        let mut chains = vec![Vec::new(); n];
        let mut truncated = false;
        let mut seed = 0;
        for ev in &trace.events {
            let (from, step, kind) = match &ev.body {
                EventBody::Header(h) => {
                    seed = h.seed;
                    continue;
                }
                EventBody::Raw { from, step, .. } => (from, step, 0),
                EventBody::Ack { from, step, .. } => (from, step, 1),
                EventBody::Cert { from, step, .. } => (from, step, 2),
                EventBody::Commit { round, node, .. } => {
                    committed[node.index()][*round as usize] = true;
                    continue;
                }
                EventBody::Finalize { node, blocks, .. } => {
                    chains[node.index()].extend(blocks.iter().map(|b| b.hash.clone()));
                    continue;
                }
                EventBody::End { status, .. } => {
                    truncated = *status == EndStatus::Truncated;
                    continue;
                }
                _ => continue,
            };
            msgs[from.index()][*step as usize][kind] += 1;
        }
        RunData {
            run,
            seed,
            truncated,
            committed,
            msgs,
            chains,
        }
    }
}

/// One row of per-round output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub run: u64,
    pub round: u64,
    pub node: u32,
    pub committed: bool,
    /// Rounds from this one until the node next commits (1 if it commits
    /// this round); empty if it never does within the run.
    pub rounds_to_finality: Option<u64>,
    pub msgs_raw: u64,
    pub msgs_ack: u64,
    pub msgs_cert: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Finality {
    pub mean: Option<f64>,
    pub p50: Option<u64>,
    pub p90: Option<u64>,
    pub p99: Option<u64>,
    pub max: Option<u64>,
    /// Node-rounds never finalized before their run ended.
    pub unfinalized: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepMsgs {
    pub raw: f64,
    pub ack: f64,
    pub cert: f64,
}

/// Aggregate over every completed (non-truncated) run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: u64,
    pub truncated_runs: u64,
    pub nodes: usize,
    pub rounds: u64,
    /// Rounds each node took part in across completed runs.
    pub observed_rounds: u64,
    pub commits: Vec<u64>,
    pub commit_rate: Vec<f64>,
    /// 99% one-sided lower confidence bound on each node's commit rate.
    pub commit_rate_lower_99: Vec<f64>,
    /// Fraction of rounds in which every node committed.
    pub global_success_rate: f64,
    pub rounds_to_finality: Finality,
    /// Messages sent by all nodes together, per logical step.
    pub msgs_per_step: StepMsgs,
    /// `streak_histogram[k]` counts node-rounds ending a run of exactly `k`
    /// consecutive non-commits (0 for a committed round).
    pub streak_histogram: Vec<u64>,
}

/// A summary, the per-round rows behind it and the config that made them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub summary: Summary,
    pub rows: Vec<RoundRow>,
}

fn rate(k: u64, n: u64) -> f64 {
    if n == 0 {
        0.0
    } else {
        k as f64 / n as f64
    }
}

// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[u64], q: f64) -> Option<u64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Fold per-run data, in the given order, into a summary and rows.
pub fn summarize(cfg: &ExperimentConfig, runs: &[RunData]) -> (Summary, Vec<RoundRow>) {
    let n = cfg.nodes;
    let rounds = cfg.rounds;
    let qsc = QscConfig {
        rounds,
        pipeline: cfg.pipeline,
        ..QscConfig::default()
    };
    let mut rows = Vec::new();
    let mut s = Summary {
        runs: runs.len() as u64,
        nodes: n,
        rounds,
        commits: vec![0; n],
        ..Summary::default()
    };
    let mut finality = Vec::new();
    let mut successes = 0u64;
    let mut totals = [0u64; 3];
    let mut steps = 0u64;
    for data in runs {
        for r in 0..rounds {
            let start = qsc.round_start(r);
            let end = if r + 1 == rounds {
                u64::MAX
            } else {
                qsc.round_start(r + 1)
            };
            for i in 0..n {
                let committed = data.committed[i][r as usize];
                let rtf = (r..rounds)
                    .find(|&x| data.committed[i][x as usize])
                    .map(|x| x - r + 1);
                let mut m = [0u64; 3];
                for (step, counts) in data.msgs[i].iter().enumerate() {
                    if (start..end).contains(&(step as u64)) {
                        for k in 0..3 {
                            m[k] += counts[k];
                        }
                    }
                }
                rows.push(RoundRow {
                    run: data.run,
                    round: r,
                    node: i as u32,
                    committed,
                    rounds_to_finality: rtf,
                    msgs_raw: m[0],
                    msgs_ack: m[1],
                    msgs_cert: m[2],
                });
            }
        }
        if data.truncated {
            s.truncated_runs += 1;
            continue;
        }
        s.observed_rounds += rounds;
        for r in 0..rounds as usize {
            if (0..n).all(|i| data.committed[i][r]) {
                successes += 1;
            }
        }
        for i in 0..n {
            let mut streak = 0usize;
            for r in 0..rounds as usize {
                if data.committed[i][r] {
                    s.commits[i] += 1;
                    streak = 0;
                } else {
                    streak += 1;
                }
                if s.streak_histogram.len() <= streak {
                    s.streak_histogram.resize(streak + 1, 0);
                }
                s.streak_histogram[streak] += 1;
                match (r as u64..rounds).find(|&x| data.committed[i][x as usize]) {
                    Some(x) => finality.push(x - r as u64 + 1),
                    None => s.rounds_to_finality.unfinalized += 1,
                }
            }
            for counts in &data.msgs[i] {
                for k in 0..3 {
                    totals[k] += counts[k];
                }
            }
        }
        steps += data.msgs.first().map_or(0, |m| m.len() as u64);
    }
    s.commit_rate = s
        .commits
        .iter()
        .map(|&k| rate(k, s.observed_rounds))
        .collect();
    s.commit_rate_lower_99 = s
        .commits
        .iter()
        .map(|&k| stats::lower_bound(k, s.observed_rounds, 0.99))
        .collect();
    s.global_success_rate = rate(successes, s.observed_rounds);
    finality.sort_unstable();
    let f = &mut s.rounds_to_finality;
    if !finality.is_empty() {
        f.mean = Some(finality.iter().sum::<u64>() as f64 / finality.len() as f64);
    }
    f.p50 = percentile(&finality, 0.5);
    f.p90 = percentile(&finality, 0.9);
    f.p99 = percentile(&finality, 0.99);
    f.max = finality.last().copied();
    s.msgs_per_step = StepMsgs {
        raw: rate(totals[0], steps),
        ack: rate(totals[1], steps),
        cert: rate(totals[2], steps),
    };
    (s, rows)
}

fn thread_cap() -> Result<Option<usize>, ExperimentError> {
    match env::var(THREADS_VAR) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(k) if k > 0 => Ok(Some(k)),
            _ => Err(ExperimentError::Threads(format!(
                "expected a positive integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(None),
    }
}

/// Result of [`run_experiment_with`].
pub struct Experiment {
    pub report: Report,
    pub runs: Vec<RunData>,
    /// Trace of run 0, when requested.
    pub first_trace: Option<Trace>,
}

/// Run and summarize an experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report, ExperimentError> {
    Ok(run_experiment_with(cfg, false)?.report)
}

/// Run `cfg.runs` independent simulations across worker threads and fold
/// them in run order. With `cfg.check`, the first violating run (by index)
/// aborts the experiment.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    keep_first_trace: bool,
) -> Result<Experiment, ExperimentError> {
    cfg.validate()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = thread_cap()? {
        pool = pool.num_threads(k);
    }
    let pool = pool
        .build()
        .map_err(|e| ExperimentError::Threads(e.to_string()))?;
    let results: Vec<Result<(RunData, Option<Trace>), ExperimentError>> = pool.install(|| {
        (0..cfg.runs)
            .into_par_iter()
            .map(|k| one_run(cfg, k, keep_first_trace && k == 0))
            .collect()
    });
    let mut runs = Vec::with_capacity(results.len());
    let mut first_trace = None;
    for r in results {
        let (data, trace) = r?;
        if trace.is_some() {
            first_trace = trace;
        }
        runs.push(data);
    }
    let (summary, rows) = summarize(cfg, &runs);
    Ok(Experiment {
        report: Report {
            config: cfg.clone(),
            summary,
            rows,
        },
        runs,
        first_trace,
    })
}

fn one_run(
    cfg: &ExperimentConfig,
    k: u64,
    keep_trace: bool,
) -> Result<(RunData, Option<Trace>), ExperimentError> {
    let rc = cfg.run_config(k)?;
    let seed = rc.sim.seed;
    let out = run(&rc).map_err(|source| match source {
        SimError::Config(e) => ExperimentError::Config(e),
        source => ExperimentError::Sim {
            run: k,
            seed,
            source,
        },
    })?;
    if cfg.check {
        let violations = check_all(&out.trace)?;
        if !violations.is_empty() {
            return Err(ExperimentError::Violation {
                run: k,
                seed,
                violations,
            });
        }
    }
    let data = RunData::from_trace(k, &out.trace, cfg.nodes, cfg.rounds, rc.tlc.max_step);
    Ok((data, keep_trace.then_some(out.trace)))
}
