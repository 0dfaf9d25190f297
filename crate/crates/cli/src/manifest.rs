//! Run manifests: what was run, with which config and seeds, and a sha256
//! for every file the command left in its output directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Flat `key = value` config text, when the command used one.
    pub config: Option<String>,
    pub seeds: Vec<u64>,
    /// Dataset directory the command read, as given on the command line.
    pub dataset: Option<String>,
    pub notes: Vec<String>,
    pub outputs: Vec<Artifact>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            config: None,
            seeds: Vec::new(),
            dataset: None,
            notes: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Checksums every file under `dir` (except the manifest itself) and
    /// writes the manifest there. Listing the directory after the command
    /// finishes means every referenced file exists.
    pub fn finalize(mut self, dir: &Path) -> Result<PathBuf> {
        let mut files = Vec::new();
        collect_files(dir, dir, &mut files)?;
        files.sort();
        self.outputs = files
            .into_iter()
            .filter(|rel| rel != RUN_MANIFEST_FILE)
            .map(|rel| {
                let bytes = std::fs::read(dir.join(&rel)).map_err(|e| CliError::io(&dir.join(&rel), e))?;
                Ok(Artifact {
                    sha256: sha256_hex(&bytes),
                    bytes: bytes.len() as u64,
                    path: rel,
                })
            })
            .collect::<Result<_>>()?;
        let path = dir.join(RUN_MANIFEST_FILE);
        let body = serde_json::to_string_pretty(&self).map_err(mvsc_core::Error::from)?;
        std::fs::write(&path, body + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(RUN_MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(serde_json::from_str(&text).map_err(mvsc_core::Error::from)?)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("listed under root");
            let parts: Vec<_> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
            out.push(parts.join("/"));
        }
    }
    Ok(())
}
