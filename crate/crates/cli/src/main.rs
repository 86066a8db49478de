use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tlcqsc::check::check_all;
use tlcqsc::check::exhaustive::{exhaustive_safety, ExhaustiveConfig, Verdict};
use tlcqsc::{CommitRule, Trace};
use tlcqsc_cli::{
    emit, run_experiment_with, AdversarySpec, ExperimentConfig, ExperimentError, OutFormat,
};

const EXIT_VIOLATION: u8 = 2;
const EXIT_CONFIG: u8 = 3;

#[derive(Parser)]
#[command(
    name = "tlcqsc",
    version,
    about = "Threshold logical clock and consensus experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of simulations and summarize them.
    Run(RunArgs),
    /// Check a recorded trace (newline-delimited JSON).
    Check { trace: PathBuf },
    /// Exhaustively explore delivery orders of a small instance.
    Exhaustive(ExhaustiveArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    tm: Option<usize>,
    #[arg(long)]
    tw: Option<usize>,
    #[arg(long)]
    fd: Option<usize>,
    #[arg(long)]
    rounds: Option<u64>,
    #[arg(long)]
    runs: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// oblivious, ticket-aware, delay-set, delay-set:rotating:<period> or
    /// delay-set:fixed:<ids>.
    #[arg(long)]
    adversary: Option<AdversarySpec>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    encrypt_tickets: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pipeline: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    check: Option<bool>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<OutFormat>,
    #[arg(long)]
    max_events: Option<u64>,
    #[arg(long)]
    max_step: Option<u64>,
    /// Write the trace of the first run here.
    #[arg(long)]
    dump_trace: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig, String> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text =
                    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
                serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
            }
            None => ExperimentConfig::default(),
        };
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field {
                    cfg.$field = v.clone();
                })*
            };
        }
        take!(
            nodes,
            tm,
            tw,
            fd,
            rounds,
            runs,
            seed,
            adversary,
            encrypt_tickets,
            pipeline,
            check,
            format,
            max_events,
            max_step
        );
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct ExhaustiveArgs {
    #[arg(long, default_value_t = 3)]
    nodes: usize,
    #[arg(long, default_value_t = 2)]
    tm: usize,
    #[arg(long, default_value_t = 2)]
    tw: usize,
    #[arg(long, default_value_t = 1)]
    rounds: u64,
    /// Use the unsafe commit-on-confirmation rule.
    #[arg(long)]
    confirm_only: bool,
    /// Distinct states to explore before giving up.
    #[arg(long)]
    budget: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => run(&args),
        Command::Check { trace } => check(&trace),
        Command::Exhaustive(args) => exhaustive(&args),
    }
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn run(args: &RunArgs) -> ExitCode {
    let cfg = match args.config() {
        Ok(cfg) => cfg,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let exp = match run_experiment_with(&cfg, args.dump_trace.is_some()) {
        Ok(exp) => exp,
        Err(ExperimentError::Config(e)) => return fail(EXIT_CONFIG, e),
        Err(ExperimentError::Threads(e)) => return fail(EXIT_CONFIG, e),
        Err(ExperimentError::Violation {
            run,
            seed,
            violations,
        }) => {
            eprintln!("run {run} (seed {seed}) violates:");
            for v in &violations {
                eprintln!("  {v}");
            }
            return ExitCode::from(EXIT_VIOLATION);
        }
        Err(e) => return fail(1, e),
    };
    if let (Some(path), Some(trace)) = (&args.dump_trace, &exp.first_trace) {
        let written = File::create(path).and_then(|f| {
            let mut w = BufWriter::new(f);
            trace.write_ndjson(&mut w)?;
            w.flush()
        });
        if let Err(e) = written {
            return fail(1, format!("{}: {e}", path.display()));
        }
    }
    if let Some(path) = &cfg.out {
        if let Err(e) = emit(&exp.report, cfg.format, path) {
            return fail(1, e);
        }
    }
    let summary = serde_json::to_string_pretty(&exp.report.summary).expect("summary serializes");
    println!("{summary}");
    ExitCode::SUCCESS
}

fn check(path: &PathBuf) -> ExitCode {
    let trace = match File::open(path)
        .map_err(|e| e.to_string())
        .and_then(|f| Trace::read_ndjson(BufReader::new(f)).map_err(|e| e.to_string()))
    {
        Ok(t) => t,
        Err(e) => return fail(1, format!("{}: {e}", path.display())),
    };
    match check_all(&trace) {
        Ok(v) if v.is_empty() => {
            println!("ok: {} events, no violations", trace.events.len());
            ExitCode::SUCCESS
        }
        Ok(v) => {
            for violation in &v {
                println!("{violation}");
            }
            ExitCode::from(EXIT_VIOLATION)
        }
        Err(e) => fail(EXIT_CONFIG, e),
    }
}

fn exhaustive(args: &ExhaustiveArgs) -> ExitCode {
    let mut cfg = ExhaustiveConfig::new(args.nodes, args.tm, args.tw, args.rounds);
    if args.confirm_only {
        cfg = cfg.with_rule(CommitRule::ConfirmOnly);
    }
    if let Some(b) = args.budget {
        cfg.state_budget = b;
    }
    let report = match exhaustive_safety(&cfg) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    match report.verdict {
        Verdict::Safe => ExitCode::SUCCESS,
        Verdict::Unsafe(_) => ExitCode::from(EXIT_VIOLATION),
        Verdict::Inconclusive { .. } => ExitCode::from(1),
    }
}
