//! Run manifests: what was run, with which configuration and seed, and
//! what it produced.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub toolkit_version: String,
    /// SHA-256 of the resolved configuration document.
    pub config_digest: String,
    pub seed: Option<u64>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    /// Parameters fixed before any data is read.
    pub parameters: serde_json::Value,
    pub outputs: Vec<PathBuf>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn start(command: &str, config_text: &str, seed: Option<u64>, parameters: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            config_digest: sha256_hex(config_text.as_bytes()),
            seed,
            started_unix: now_unix(),
            finished_unix: None,
            parameters,
            outputs: Vec::new(),
        }
    }

    pub fn add_output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    pub fn finish(&mut self) {
        self.finished_unix = Some(now_unix());
    }

    /// Writes `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> io::Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(io::Error::from)?;
        fs::write(&path, text + "\n")?;
        Ok(path)
    }

    pub fn read(dir: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        serde_json::from_str(&text).map_err(io::Error::from)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_tracks_contents() {
        let a = RunManifest::start("simulate", "seed = 1\n", Some(1), serde_json::json!({}));
        let b = RunManifest::start("simulate", "seed = 2\n", Some(1), serde_json::json!({}));
        assert_ne!(a.config_digest, b.config_digest);
        assert_eq!(a.config_digest.len(), 64);
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::start("analyze", "x", None, serde_json::json!({"n_stop": 5}));
        m.add_output("report.json");
        m.finish();
        m.write(dir.path()).unwrap();
        assert_eq!(RunManifest::read(dir.path()).unwrap(), m);
    }
}
