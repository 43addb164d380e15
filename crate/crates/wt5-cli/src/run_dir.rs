//! Run directories: every subcommand writes `config.json` (the resolved
//! configuration), its outputs, `summary.json` and `metadata.json`.
//! Only `metadata.json` carries wall-clock data, so two runs with the same
//! config produce byte-identical files everywhere else.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::{CliError, Result};

pub struct RunDir {
    root: PathBuf,
    started: SystemTime,
}

#[derive(Serialize)]
struct Metadata<'a> {
    command: &'a str,
    version: &'a str,
    started_unix_ms: u128,
    finished_unix_ms: u128,
    elapsed_ms: u128,
}

fn unix_ms(t: SystemTime) -> u128 {
    t.duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

impl RunDir {
    /// Creates the directory and writes `config.json`.
    pub fn create(root: &Path, config: &impl Serialize) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::internal(format!("{}: {e}", root.display())))?;
        let run = RunDir {
            root: root.to_path_buf(),
            started: SystemTime::now(),
        };
        run.write_json("config.json", config)?;
        Ok(run)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Opens an output file for writing.
    pub fn writer(&self, name: &str) -> Result<BufWriter<File>> {
        let path = self.path(name);
        File::create(&path)
            .map(BufWriter::new)
            .map_err(|e| CliError::internal(format!("{}: {e}", path.display())))
    }

    pub fn write_with(&self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
        let mut w = self.writer(name)?;
        f(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| CliError::internal(format!("{}: {e}", self.path(name).display())))
    }

    pub fn write_json(&self, name: &str, value: &impl Serialize) -> Result<()> {
        self.write_with(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            w.write_all(b"\n")
        })
    }

    /// Writes `summary.json` and `metadata.json`.
    pub fn finish(self, command: &str, summary: &impl Serialize) -> Result<()> {
        self.write_json("summary.json", summary)?;
        let finished = SystemTime::now();
        self.write_json(
            "metadata.json",
            &Metadata {
                command,
                version: env!("CARGO_PKG_VERSION"),
                started_unix_ms: unix_ms(self.started),
                finished_unix_ms: unix_ms(finished),
                elapsed_ms: finished
                    .duration_since(self.started)
                    .map(|d| d.as_millis())
                    .unwrap_or(0),
            },
        )
    }
}
