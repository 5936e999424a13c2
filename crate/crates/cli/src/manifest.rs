//! Run manifests: resolved settings, input digests and the files written.

use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub struct Manifest {
    command: String,
    config: Map<String, Value>,
    inputs: Vec<(String, String)>,
    outputs: Vec<(String, Vec<u8>)>,
    warnings: Vec<String>,
    results: Map<String, Value>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Manifest {
            command: command.to_string(),
            config: Map::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            warnings: Vec::new(),
            results: Map::new(),
        }
    }

    pub fn config(&mut self, key: &str, value: impl Into<Value>) {
        self.config.insert(key.to_string(), value.into());
    }

    pub fn result(&mut self, key: &str, value: impl Into<Value>) {
        self.results.insert(key.to_string(), value.into());
    }

    pub fn warn(&mut self, w: impl Into<String>) {
        self.warnings.push(w.into());
    }

    /// Reads an input file and records its digest.
    pub fn read_input(&mut self, path: &Path) -> Result<String, CliError> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
        self.inputs
            .push((path.display().to_string(), sha256_hex(&bytes)));
        String::from_utf8(bytes)
            .map_err(|_| CliError::data(format!("{} is not UTF-8 text", path.display())))
    }

    pub fn output(&mut self, name: &str, contents: impl Into<Vec<u8>>) {
        self.outputs.push((name.to_string(), contents.into()));
    }

    /// Writes every output and then `manifest.json` into `dir`.
    pub fn write(self, dir: &Path) -> Result<PathBuf, CliError> {
        let fail = |p: &Path, e: std::io::Error| CliError::internal(format!("cannot write {}: {e}", p.display()));
        std::fs::create_dir_all(dir).map_err(|e| fail(dir, e))?;
        let mut listed = Vec::new();
        for (name, bytes) in &self.outputs {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| fail(&path, e))?;
            listed.push(json!({ "file": name, "sha256": sha256_hex(bytes) }));
        }
        let inputs: Vec<Value> = self
            .inputs
            .iter()
            .map(|(p, d)| json!({ "path": p, "sha256": d }))
            .collect();
        let manifest = json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "config": Value::Object(self.config),
            "inputs": inputs,
            "outputs": listed,
            "results": Value::Object(self.results),
            "warnings": self.warnings,
        });
        let path = dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| fail(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
