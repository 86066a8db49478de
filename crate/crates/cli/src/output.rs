//! Machine-readable outputs. Both formats are byte-stable for a given
//! report.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::OutFormat;
use crate::experiment::{Report, RoundRow};

pub const CSV_COLUMNS: [&str; 8] = [
    "run",
    "round",
    "node",
    "committed",
    "rounds_to_finality",
    "msgs_raw",
    "msgs_ack",
    "msgs_cert",
];

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub fn write_csv<W: Write>(rows: &[RoundRow], out: W) -> Result<(), OutputError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_json<W: Write>(report: &Report, mut out: W) -> Result<(), OutputError> {
    serde_json::to_writer_pretty(&mut out, report)?;
    out.write_all(b"\n").map_err(serde_json::Error::io)?;
    Ok(())
}

/// Where the config of a CSV output is written, since CSV cannot carry it.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".config.json");
    PathBuf::from(name)
}

fn create(path: &Path) -> Result<BufWriter<File>, OutputError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| OutputError::Io {
            path: path.to_owned(),
            source,
        })
}

/// Write `report` to `path`. CSV output gets a `.config.json` sidecar with
/// the canonical config; JSON output embeds it.
pub fn emit(report: &Report, format: OutFormat, path: &Path) -> Result<(), OutputError> {
    match format {
        OutFormat::Csv => {
            write_csv(&report.rows, create(path)?)?;
            let side = sidecar_path(path);
            let mut w = create(&side)?;
            let io = |source| OutputError::Io {
                path: side.clone(),
                source,
            };
            writeln!(w, "{}", report.config.canonical_json()).map_err(io)?;
            w.flush().map_err(io)?;
        }
        OutFormat::Json => {
            let mut w = create(path)?;
            write_json(report, &mut w)?;
            w.flush().map_err(|source| OutputError::Io {
                path: path.to_owned(),
                source,
            })?;
        }
    }
    Ok(())
}
