use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

impl InputDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let mut file = File::open(path).map_err(|e| CliError::io(path, e))?;
        let mut hasher = Sha256::new();
        let mut buf = vec![0u8; 1 << 16];
        let mut bytes = 0u64;
        loop {
            let n = file.read(&mut buf).map_err(|e| CliError::io(path, e))?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
            bytes += n as u64;
        }
        Ok(Self {
            path: path.to_path_buf(),
            bytes,
            sha256: format!("{:x}", hasher.finalize()),
        })
    }
}

/// What a command was asked to do, enough to rerun it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub arguments: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
    pub tool_version: String,
    /// Seconds since the Unix epoch.
    pub started_at: f64,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: serde_json::Value,
        seed: Option<u64>,
        inputs: &[&Path],
    ) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            arguments: std::env::args().collect(),
            config,
            seed,
            inputs: inputs.iter().map(|p| InputDigest::of(p)).collect::<Result<_>>()?,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: unix_now(),
        })
    }

    /// Inputs whose current digest no longer matches the recorded one.
    pub fn changed_inputs(&self) -> Result<Vec<PathBuf>> {
        let mut changed = Vec::new();
        for input in &self.inputs {
            if InputDigest::of(&input.path)? != *input {
                changed.push(input.path.clone());
            }
        }
        Ok(changed)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::files::write_json(path, self)
    }
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_matches_known_value_and_detects_changes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        std::fs::write(&path, b"abc").unwrap();
        let d = InputDigest::of(&path).unwrap();
        assert_eq!(
            d.sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let m = RunManifest::new("test", serde_json::json!({}), Some(1), &[&path]).unwrap();
        assert!(m.changed_inputs().unwrap().is_empty());
        std::fs::write(&path, b"abd").unwrap();
        assert_eq!(m.changed_inputs().unwrap(), vec![path]);
    }
}
