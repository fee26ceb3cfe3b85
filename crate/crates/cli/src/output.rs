//! Result bundles: CSV tables with a `#` metadata line, plus a JSON summary.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::CliError;

pub struct Bundle {
    dir: PathBuf,
    command: String,
    config_hash: String,
    seed: u64,
    files: Vec<String>,
}

/// Shortest round-trip formatting, so tables are bit-stable; scientific outside [1e-4, 1e6).
pub fn num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-4..1e6).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

impl Bundle {
    pub fn new(dir: &Path, command: &str, config_hash: String, seed: u64) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Bundle { dir: dir.to_path_buf(), command: command.into(), config_hash, seed, files: Vec::new() })
    }

    fn metadata_line(&self) -> String {
        format!(
            "# rydpump {} command={} config_sha256={} seed={}\n",
            rydpump::VERSION,
            self.command,
            self.config_hash,
            self.seed
        )
    }

    pub fn table(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(self.metadata_line().into_bytes());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
        let file = format!("{name}.csv");
        self.write(&file, &bytes)?;
        self.files.push(file);
        Ok(())
    }

    /// Writes `<command>.json` with the run metadata merged into `summary`.
    pub fn finish(self, summary: Value) -> Result<Value, CliError> {
        let doc = json!({
            "command": self.command,
            "version": rydpump::VERSION,
            "config_sha256": self.config_hash,
            "seed": self.seed,
            "tables": self.files,
            "summary": summary,
        });
        let text = serde_json::to_string_pretty(&doc)? + "\n";
        self.write(&format!("{}.json", self.command.replace(' ', "_")), text.as_bytes())?;
        Ok(doc)
    }

    fn write(&self, file: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(file);
        fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}
