//! `manifest.json`: the resolved job, the tool version and content hashes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use swag_core::{Error, Precision, Result};

use crate::jobs::Job;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileHash {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(FileHash {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub precision: Precision,
    #[serde(flatten)]
    pub job: Job,
    pub inputs: Vec<FileHash>,
    /// Output files by name relative to the output directory.
    pub outputs: Vec<FileHash>,
    /// Reconstruction only; `null` stands for +inf (identical images).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psnr: Option<Psnr>,
}

/// JSON has no infinity, so a perfect reconstruction serializes as `null`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Psnr(pub Option<f64>);

impl Psnr {
    pub fn new(db: f64) -> Self {
        Psnr(db.is_finite().then_some(db))
    }

    pub fn db(self) -> f64 {
        self.0.unwrap_or(f64::INFINITY)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(crate::output::MANIFEST_JSON);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }

    /// Fails unless every recorded input still hashes to the recorded value.
    pub fn verify_inputs(&self) -> Result<()> {
        for f in &self.inputs {
            let now = sha256_file(&f.path)?;
            if now != f.sha256 {
                return Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("input {} changed since the manifest was written", f.path.display()),
                )));
            }
        }
        Ok(())
    }
}
