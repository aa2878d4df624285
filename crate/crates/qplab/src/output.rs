//! Output directory writer. Every file is stamped with the config hash and
//! seed and listed with its digest in `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Git-style content hash: SHA-256 over `blob <len>\0<bytes>`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
}

pub struct OutputDir {
    dir: PathBuf,
    config_hash: String,
    seed: u64,
    written: Vec<ManifestEntry>,
}

impl OutputDir {
    pub fn create(dir: &Path, config_hash: String, seed: u64) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), config_hash, seed, written: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| io_error(&path, e))?;
        self.written.retain(|e| e.file != name);
        self.written.push(ManifestEntry { file: name.into(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    /// CSV body preceded by a `#` provenance comment line.
    pub fn write_csv(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        let text = format!("# config_hash={} seed={}\n{body}", self.config_hash, self.seed);
        self.write(name, text.as_bytes())
    }

    /// Plain text with the same leading comment line as CSV files.
    pub fn write_text(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        self.write_csv(name, body)
    }

    /// `payload` must serialize to an object; the hash and seed are added to it.
    pub fn write_json(&mut self, name: &str, payload: &impl Serialize) -> Result<(), CliError> {
        let mut obj = match serde_json::to_value(payload).map_err(|e| CliError::Io(e.to_string()))? {
            Value::Object(m) => m,
            other => {
                let mut m = Map::new();
                m.insert("data".into(), other);
                m
            }
        };
        obj.insert("config_hash".into(), json!(self.config_hash));
        obj.insert("seed".into(), json!(self.seed));
        let mut text = serde_json::to_string_pretty(&Value::Object(obj)).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn finish(mut self, command: &str) -> Result<Vec<ManifestEntry>, CliError> {
        let mut files = self.written.clone();
        files.sort_by(|a, b| a.file.cmp(&b.file));
        let manifest = json!({
            "tool": concat!("qplab ", env!("CARGO_PKG_VERSION")),
            "command": command,
            "files": files,
        });
        self.write_json("manifest.json", &manifest)?;
        Ok(files)
    }
}

pub fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}
