//! Experiment configuration, shared by the config file and the flags.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use tlcqsc::{AdversaryKind, ConfigError, DelaySchedule, NodeId, RunConfig, Step};

/// Output format for per-round results.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(OutFormat::Csv),
            "json" => Ok(OutFormat::Json),
            _ => Err(format!("unknown format {s:?}, expected csv or json")),
        }
    }
}

/// Network adversary, written as a short string so the config file and the
/// `--adversary` flag take the same values:
///
/// * `oblivious`
/// * `ticket-aware`
/// * `delay-set` (a rotating set of `fd` nodes, moving every 64 events)
/// * `delay-set:rotating:<period>`
/// * `delay-set:fixed:<id>,<id>,...`
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AdversarySpec {
    #[default]
    Oblivious,
    TicketAware,
    Rotating {
        period: u64,
    },
    Fixed(Vec<u32>),
}

pub const DEFAULT_ROTATION: u64 = 64;

impl AdversarySpec {
    pub fn kind(&self, f_d: usize) -> AdversaryKind {
        match self {
            AdversarySpec::Oblivious => AdversaryKind::Oblivious,
            AdversarySpec::TicketAware => AdversaryKind::TicketAware,
            AdversarySpec::Rotating { period } => AdversaryKind::DelaySet {
                schedule: DelaySchedule::Rotating {
                    period: *period,
                    size: f_d,
                },
            },
            AdversarySpec::Fixed(ids) => AdversaryKind::DelaySet {
                schedule: DelaySchedule::Fixed(ids.iter().map(|&i| NodeId(i)).collect()),
            },
        }
    }
}

impl fmt::Display for AdversarySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AdversarySpec::Oblivious => write!(f, "oblivious"),
            AdversarySpec::TicketAware => write!(f, "ticket-aware"),
            AdversarySpec::Rotating { period } => write!(f, "delay-set:rotating:{period}"),
            AdversarySpec::Fixed(ids) => {
                let ids: Vec<String> = ids.iter().map(u32::to_string).collect();
                write!(f, "delay-set:fixed:{}", ids.join(","))
            }
        }
    }
}

impl FromStr for AdversarySpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("unknown adversary {s:?}");
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["oblivious"] => Ok(AdversarySpec::Oblivious),
            ["ticket-aware"] => Ok(AdversarySpec::TicketAware),
            ["delay-set"] => Ok(AdversarySpec::Rotating {
                period: DEFAULT_ROTATION,
            }),
            ["delay-set", "rotating", p] => match p.parse() {
                Ok(period) if period > 0 => Ok(AdversarySpec::Rotating { period }),
                _ => Err(bad()),
            },
            ["delay-set", "fixed", ids] => {
                let ids: Result<Vec<u32>, _> = ids
                    .split(',')
                    .filter(|x| !x.is_empty())
                    .map(str::parse)
                    .collect();
                ids.map(AdversarySpec::Fixed).map_err(|_| bad())
            }
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for AdversarySpec {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<AdversarySpec> for String {
    fn from(a: AdversarySpec) -> String {
        a.to_string()
    }
}

/// Everything that determines an experiment. Field names double as the
/// command-line flag names.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub nodes: usize,
    pub tm: usize,
    pub tw: usize,
    pub fd: usize,
    pub rounds: u64,
    pub runs: u64,
    /// Run `k` uses seed `seed + k`.
    pub seed: u64,
    pub adversary: AdversarySpec,
    pub encrypt_tickets: bool,
    pub pipeline: bool,
    /// Check every trace and stop at the first violation.
    pub check: bool,
    pub format: OutFormat,
    pub out: Option<PathBuf>,
    /// Deliveries after which a run is cut off as truncated.
    pub max_events: u64,
    /// Clock-only runs (`rounds = 0`) go this many steps.
    pub max_step: Step,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            nodes: 3,
            tm: 2,
            tw: 2,
            fd: 0,
            rounds: 10,
            runs: 1,
            seed: 0,
            adversary: AdversarySpec::Oblivious,
            encrypt_tickets: true,
            pipeline: false,
            check: false,
            format: OutFormat::Csv,
            out: None,
            max_events: 50_000_000,
            max_step: 0,
        }
    }
}

impl ExperimentConfig {
    /// Canonical JSON form, embedded in every output.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// The simulator configuration of run `k`.
    pub fn run_config(&self, k: u64) -> Result<RunConfig, ConfigError> {
        let seed = self.seed.wrapping_add(k);
        let mut cfg = if self.rounds == 0 {
            RunConfig::clock_only(self.nodes, self.tm, self.tw, self.fd, self.max_step, seed)?
        } else {
            let mut cfg = RunConfig::clock_only(self.nodes, self.tm, self.tw, self.fd, 0, seed)?;
            cfg.qsc.rounds = self.rounds;
            cfg.with_pipeline(self.pipeline)
        };
        cfg.qsc.encrypt_tickets = self.encrypt_tickets;
        cfg.sim.adversary = self.adversary.kind(self.fd);
        cfg.sim.max_events = self.max_events;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.run_config(0).map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adversary_strings_round_trip() {
        for s in [
            "oblivious",
            "ticket-aware",
            "delay-set:rotating:10",
            "delay-set:fixed:1,2",
        ] {
            let spec: AdversarySpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
        assert_eq!(
            "delay-set".parse::<AdversarySpec>().unwrap(),
            AdversarySpec::Rotating { period: 64 }
        );
        assert!("delay-set:rotating:0".parse::<AdversarySpec>().is_err());
        assert!("chaos".parse::<AdversarySpec>().is_err());
    }

    #[test]
    fn config_json_round_trips() {
        let cfg = ExperimentConfig {
            adversary: AdversarySpec::Fixed(vec![0]),
            fd: 1,
            ..ExperimentConfig::default()
        };
        let back: ExperimentConfig = serde_json::from_str(&cfg.canonical_json()).unwrap();
        assert_eq!(back, cfg);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"nodes":5}"#).unwrap();
        assert_eq!(partial.nodes, 5);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus":1}"#).is_err());
    }

    #[test]
    fn run_configs_follow_the_seed() {
        let cfg = ExperimentConfig {
            seed: 10,
            ..ExperimentConfig::default()
        };
        assert_eq!(cfg.run_config(3).unwrap().sim.seed, 13);
        assert_eq!(cfg.run_config(0).unwrap().tlc.max_step, 30);
        let bad = ExperimentConfig {
            tm: 4,
            ..ExperimentConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
