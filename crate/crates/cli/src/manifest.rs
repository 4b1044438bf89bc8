//! Run manifests and staged output directories.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Overrides;
use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
}

/// Everything needed to regenerate a run. Deliberately free of timestamps and
/// host details so a replay writes an identical manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub label: String,
    pub config: String,
    pub config_sha256: String,
    pub seed: u64,
    pub overrides: Overrides,
    pub version: String,
    pub files: Vec<FileDigest>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Files are written under a hidden staging directory and moved into
/// `<root>/<label>/<command>` only when the command succeeds.
pub struct RunDir {
    staging: PathBuf,
    target: PathBuf,
    files: Vec<FileDigest>,
    done: bool,
}

impl RunDir {
    pub fn create(root: &Path, label: &str, command: &str) -> Result<Self, CliError> {
        let parent = root.join(label);
        let target = parent.join(command);
        if target.exists() {
            return Err(CliError::Config(format!(
                "output directory {} already exists; refusing to overwrite a previous run",
                target.display()
            )));
        }
        fs::create_dir_all(&parent)?;
        let staging = parent.join(format!(".{command}.partial-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir(&staging)?;
        Ok(Self {
            staging,
            target,
            files: Vec::new(),
            done: false,
        })
    }

    pub fn target(&self) -> &Path {
        &self.target
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        fs::write(self.staging.join(name), bytes)?;
        self.files.push(FileDigest {
            name: name.into(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes the manifest and moves the staging directory into place.
    pub fn commit(mut self, mut manifest: Manifest) -> Result<PathBuf, CliError> {
        manifest.files = std::mem::take(&mut self.files);
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Other(e.to_string()))?;
        text.push('\n');
        fs::write(self.staging.join(MANIFEST), text)?;
        if self.target.exists() {
            return Err(CliError::Config(format!(
                "output directory {} appeared during the run; refusing to overwrite",
                self.target.display()
            )));
        }
        fs::rename(&self.staging, &self.target)?;
        self.done = true;
        Ok(self.target.clone())
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        if !self.done {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}
