//! Run manifests: `key<TAB>value` lines recording the command, settings,
//! seed and SHA-256 hashes of every input and output.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::formats::{self, FormatError};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a file, or of a directory as the sorted sequence of its files'
/// names and contents.
pub fn hash_path(path: &Path) -> Result<String, FormatError> {
    let io = |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    };
    if path.is_dir() {
        let mut h = Sha256::new();
        for file in formats::corpus_files(path)? {
            let name = file.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let body = std::fs::read(&file).map_err(|source| FormatError::Io { path: file.clone(), source })?;
            h.update(name.as_bytes());
            h.update([0]);
            h.update(Sha256::digest(&body));
        }
        Ok(hex::encode(h.finalize()))
    } else {
        Ok(sha256_hex(&std::fs::read(path).map_err(io)?))
    }
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Manifest::default();
        m.set("command", command);
        m.set("version", env!("CARGO_PKG_VERSION"));
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string().replace(['\t', '\n'], " ");
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Records every line of a rendered config under `config.<key>`.
    pub fn config(&mut self, rendered: &str) {
        for line in rendered.lines() {
            if let Some((k, v)) = line.split_once(" = ") {
                self.set(&format!("config.{k}"), v);
            }
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) -> Result<(), FormatError> {
        self.set(&format!("input.{name}.path"), path.display());
        self.set(&format!("input.{name}.sha256"), hash_path(path)?);
        Ok(())
    }

    pub fn output(&mut self, name: &str, path: &Path) -> Result<(), FormatError> {
        self.set(&format!("output.{name}.sha256"), hash_path(path)?);
        Ok(())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}\t{v}");
        }
        out
    }

    pub fn parse(text: &str) -> Option<Manifest> {
        let entries = text
            .lines()
            .map(|l| l.split_once('\t').map(|(k, v)| (k.to_string(), v.to_string())))
            .collect::<Option<Vec<_>>>()?;
        Some(Manifest { entries })
    }

    pub fn write(&self, dir: &Path) -> Result<(), FormatError> {
        formats::write_text(&dir.join("manifest.tsv"), &self.render())
    }
}
