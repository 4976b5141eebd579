use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::errors::{CliError, ErrorClass};

pub const TOOL: &str = concat!("visemes ", env!("CARGO_PKG_VERSION"));

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Provenance carried as the first comment line of every output file: tool
/// version, seed, and one digest per input. Deliberately no timestamps, so
/// rerunning with the same inputs and flags reproduces identical bytes.
#[derive(Debug, Clone, Default)]
pub struct Provenance {
    seed: Option<u64>,
    inputs: Vec<(String, String)>,
}

impl Provenance {
    pub fn new() -> Self {
        Provenance::default()
    }

    pub fn with_seed(seed: u64) -> Self {
        Provenance { seed: Some(seed), inputs: Vec::new() }
    }

    pub fn record_bytes(&mut self, name: &str, bytes: &[u8]) {
        self.inputs.push((name.to_string(), sha256_hex(bytes)));
    }

    /// Reads a text input and records its digest under the file's base name.
    pub fn read_input(&mut self, path: &Path) -> Result<String, CliError> {
        let text = fs::read_to_string(path).or_input(format!("reading {}", path.display()))?;
        self.record_bytes(&base_name(path), text.as_bytes());
        Ok(text)
    }

    pub fn comment(&self) -> String {
        let seed = match self.seed {
            Some(s) => s.to_string(),
            None => "-".to_string(),
        };
        let mut line = format!("# {TOOL}; seed {seed}");
        for (name, digest) in &self.inputs {
            let _ = write!(line, "; input {name} sha256:{digest}");
        }
        line
    }
}

pub fn base_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Assembles a CSV: provenance comment, extra comment lines, header, rows.
pub fn csv_text(prov: &Provenance, extra: &[String], header: &str, rows: &[String]) -> String {
    let mut out = String::new();
    out.push_str(&prov.comment());
    out.push('\n');
    for line in extra {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(row);
        out.push('\n');
    }
    out
}

pub fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).or_compute(format!("creating {}", parent.display()))?;
        }
    }
    fs::write(path, content).or_compute(format!("writing {}", path.display()))
}
