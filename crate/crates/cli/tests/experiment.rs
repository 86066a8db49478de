use std::fs;

use tlcqsc_cli::output::{sidecar_path, write_csv, write_json, CSV_COLUMNS};
use tlcqsc_cli::{emit, run_experiment, AdversarySpec, ExperimentConfig, OutFormat, Report};

fn small() -> ExperimentConfig {
    ExperimentConfig {
        rounds: 20,
        runs: 4,
        seed: 7,
        check: true,
        ..ExperimentConfig::default()
    }
}

#[test]
fn zero_rounds_make_a_header_only_csv() {
    let cfg = ExperimentConfig {
        rounds: 0,
        runs: 1,
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&cfg).unwrap();
    assert!(report.summary.commit_rate.iter().all(|&r| r == 0.0));
    let mut buf = Vec::new();
    write_csv(&report.rows, &mut buf).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap(),
        CSV_COLUMNS.join(",") + "\n"
    );
}

#[test]
fn outputs_are_byte_identical_across_executions() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for i in 0..2 {
        let report = run_experiment(&small()).unwrap();
        let csv = dir.path().join(format!("out{i}.csv"));
        let json = dir.path().join(format!("out{i}.json"));
        emit(&report, OutFormat::Csv, &csv).unwrap();
        emit(&report, OutFormat::Json, &json).unwrap();
        bytes.push((
            fs::read(&csv).unwrap(),
            fs::read(sidecar_path(&csv)).unwrap(),
            fs::read(&json).unwrap(),
        ));
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn thread_count_does_not_change_results() {
    let a = run_experiment(&small()).unwrap();
    let b = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| run_experiment(&small()).unwrap());
    assert_eq!(a, b);
}

#[test]
fn csv_and_json_carry_the_same_numbers() {
    let report = run_experiment(&small()).unwrap();
    let mut csv = Vec::new();
    write_csv(&report.rows, &mut csv).unwrap();
    let mut json = Vec::new();
    write_json(&report, &mut json).unwrap();
    let parsed: Report = serde_json::from_slice(&json).unwrap();
    assert_eq!(parsed.rows, report.rows);
    assert_eq!(parsed.config, report.config);
    let mut reader = csv::Reader::from_reader(csv.as_slice());
    let from_csv: Vec<tlcqsc_cli::RoundRow> = reader.deserialize().map(|r| r.unwrap()).collect();
    assert_eq!(from_csv, report.rows);
}

#[test]
fn rows_cover_every_run_round_and_node() {
    let report = run_experiment(&small()).unwrap();
    assert_eq!(report.rows.len(), 4 * 20 * 3);
    let s = &report.summary;
    assert_eq!(s.streak_histogram.iter().sum::<u64>(), 4 * 20 * 3);
    let commits: u64 = report.rows.iter().filter(|r| r.committed).count() as u64;
    assert_eq!(commits, s.commits.iter().sum::<u64>());
}

#[test]
fn seeds_advance_per_run() {
    let one = |seed| {
        run_experiment(&ExperimentConfig {
            runs: 1,
            seed,
            ..small()
        })
        .unwrap()
        .rows
    };
    let both = run_experiment(&ExperimentConfig {
        runs: 2,
        seed: 7,
        ..small()
    })
    .unwrap()
    .rows;
    let mut second = one(8);
    for r in &mut second {
        r.run = 1;
    }
    assert_eq!(both[..60], one(7)[..]);
    assert_eq!(both[60..], second[..]);
}

#[test]
fn unwritable_path_is_an_io_error() {
    let report = run_experiment(&ExperimentConfig {
        rounds: 1,
        ..small()
    })
    .unwrap();
    let err = emit(
        &report,
        OutFormat::Json,
        "/nonexistent/dir/out.json".as_ref(),
    );
    assert!(err.is_err());
}

#[test]
fn delay_set_runs_pass_checks() {
    let cfg = ExperimentConfig {
        nodes: 4,
        tm: 3,
        tw: 3,
        fd: 1,
        adversary: AdversarySpec::Rotating { period: 30 },
        ..small()
    };
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.summary.truncated_runs, 0);
}
