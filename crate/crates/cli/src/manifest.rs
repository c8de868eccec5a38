//! Run manifests: the resolved command plus checksums of inputs and outputs.

use std::fs::File;
use std::io::{self, BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{CliError, Command};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub tool_version: String,
    pub command: Command,
    pub seed: Option<u64>,
    /// Worker threads used; outputs do not depend on it.
    pub threads: usize,
    /// Absolute input paths.
    pub inputs: Vec<FileDigest>,
    /// Output paths relative to the output directory.
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = reader.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn digest(path: &Path, recorded_as: PathBuf) -> Result<FileDigest, CliError> {
    Ok(FileDigest {
        sha256: sha256_file(path).map_err(|e| CliError::io(path, e))?,
        path: recorded_as,
    })
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
        if m.manifest_version != MANIFEST_VERSION {
            return Err(CliError::Other(format!(
                "{}: manifest version {} is not supported (expected {MANIFEST_VERSION})",
                path.display(),
                m.manifest_version
            )));
        }
        Ok(m)
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf, CliError> {
        let path = out_dir.join(MANIFEST_FILE);
        let mut text =
            serde_json::to_string_pretty(self).map_err(|e| CliError::Other(e.to_string()))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}
