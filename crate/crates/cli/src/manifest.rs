//! Staged command outputs and the per-run manifest.
//!
//! Outputs are computed in memory first and written together; if any write
//! fails the files written so far are removed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::failure::Failure;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Files to be written by one command, keyed by the label that appears in
/// the manifest.
pub struct Outputs {
    command: String,
    manifest_dir: PathBuf,
    header: String,
    inputs: Vec<(String, String)>,
    files: Vec<(String, PathBuf, String)>,
}

impl Outputs {
    /// `config_echo` is the effective configuration; comments and layout of
    /// the config file do not reach the manifest.
    pub fn new(command: &str, manifest_dir: &Path, seed: u64, config_echo: &str) -> Self {
        let mut header = String::new();
        let _ = writeln!(header, "command={command}");
        let _ = writeln!(header, "seed={seed}");
        let _ = writeln!(header, "config.sha256={}", sha256_hex(config_echo.as_bytes()));
        header.push_str(config_echo);
        Outputs {
            command: command.to_string(),
            manifest_dir: manifest_dir.to_path_buf(),
            header,
            inputs: Vec::new(),
            files: Vec::new(),
        }
    }

    /// Records the digest of an input file under `label`.
    pub fn input(&mut self, label: &str, bytes: &[u8]) {
        self.inputs.push((label.to_string(), sha256_hex(bytes)));
    }

    pub fn add(&mut self, label: impl Into<String>, path: PathBuf, contents: String) {
        self.files.push((label.into(), path, contents));
    }

    pub fn manifest(&self) -> String {
        let mut m = String::from("normkit-manifest 1\n");
        m.push_str(&self.header);
        for (label, digest) in &self.inputs {
            let _ = writeln!(m, "input.{label}.sha256={digest}");
        }
        for (label, _, contents) in &self.files {
            let _ = writeln!(m, "output.{label}.sha256={}", sha256_hex(contents.as_bytes()));
        }
        m
    }

    /// Writes every output and then the manifest; returns the written paths.
    pub fn commit(mut self) -> Result<Vec<PathBuf>, Failure> {
        let manifest = self.manifest();
        let path = self.manifest_dir.join(format!("manifest_{}.txt", self.command));
        self.files.push(("manifest".into(), path, manifest));
        let mut written: Vec<PathBuf> = Vec::new();
        for (_, path, contents) in &self.files {
            let result = path
                .parent()
                .map_or(Ok(()), fs::create_dir_all)
                .and_then(|_| fs::write(path, contents));
            if let Err(e) = result {
                for p in &written {
                    let _ = fs::remove_file(p);
                }
                return Err(Failure::data(format!("cannot write {}: {e}", path.display())));
            }
            written.push(path.clone());
        }
        Ok(written)
    }
}
