//! Output files and the run manifest. Every file written through
//! [`Outputs`] is hashed; the manifest lists the hashes next to the hash of
//! the scenario file, so identical reruns give identical manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub struct Outputs {
    dir: PathBuf,
    command: &'static str,
    scenario_hash: String,
    files: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    scenario_sha256: &'a str,
    outputs: &'a BTreeMap<String, String>,
}

impl Outputs {
    pub fn new(dir: &Path, command: &'static str, scenario: &[u8]) -> Self {
        Self {
            dir: dir.to_path_buf(),
            command,
            scenario_hash: sha256_hex(scenario),
            files: BTreeMap::new(),
        }
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        fs::write(self.dir.join(name), bytes)?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Write `manifest.json`; returns its SHA-256.
    pub fn finish(self) -> Result<String, CliError> {
        let m = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            scenario_sha256: &self.scenario_hash,
            outputs: &self.files,
        };
        let mut text = serde_json::to_string_pretty(&m).map_err(|e| CliError::Config(e.to_string()))?;
        text.push('\n');
        fs::write(self.dir.join("manifest.json"), &text)?;
        Ok(sha256_hex(text.as_bytes()))
    }
}

/// Melt a CSV table into `(source, row, column, value)` records.
pub fn melt(source: &str, text: &str, out: &mut String) {
    let mut lines = text.lines();
    let Some(header) = lines.next() else { return };
    let cols: Vec<&str> = header.split(',').collect();
    for (row, line) in lines.enumerate() {
        for (c, v) in cols.iter().zip(line.split(',')) {
            if !v.is_empty() {
                out.push_str(&format!("{source},{row},{c},{v}\n"));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn melt_skips_empty_cells() {
        let mut s = String::new();
        melt("a.csv", "t,x,y\n0,1,\n1,2,3\n", &mut s);
        assert_eq!(s, "a.csv,0,t,0\na.csv,0,x,1\na.csv,1,t,1\na.csv,1,x,2\na.csv,1,y,3\n");
    }

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
