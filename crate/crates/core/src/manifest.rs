//! Run manifests. Each subcommand records its arguments, the resolved
//! configuration and the digests of the files it read and wrote, so a run can
//! be replayed and checked. Wall-clock time goes to a separate sidecar file
//! so that repeated runs produce identical manifests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::raster_io::write_bytes;

pub const MANIFEST_FORMAT: &str = "aquifer-manifest";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    /// Arguments after the program name; replaying runs exactly these.
    pub argv: Vec<String>,
    pub config: Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl RunManifest {
    pub fn new(subcommand: &str, argv: &[String]) -> Self {
        Self {
            format: MANIFEST_FORMAT.into(),
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            argv: argv.to_vec(),
            config: Value::Null,
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: impl AsRef<Path>) -> Result<()> {
        self.outputs.push(FileDigest::of(path)?);
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_bytes(path.as_ref(), self.to_json().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: RunManifest =
            serde_json::from_str(&text).map_err(|e| Error::format("manifest", e.to_string()))?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::format(
                "format",
                format!("expected \"{MANIFEST_FORMAT}\""),
            ));
        }
        Ok(m)
    }

    /// Output files whose current digest differs from the recorded one.
    pub fn changed_outputs(&self) -> Result<Vec<String>> {
        let mut changed = Vec::new();
        for o in &self.outputs {
            if FileDigest::of(&o.path)?.sha256 != o.sha256 {
                changed.push(o.path.clone());
            }
        }
        Ok(changed)
    }
}

pub fn timing_path(manifest: &Path) -> PathBuf {
    let mut s = manifest.as_os_str().to_owned();
    s.push(".timing.json");
    PathBuf::from(s)
}

pub fn save_timing(manifest: &Path, seconds: f64) -> Result<()> {
    let body = serde_json::json!({ "wall_clock_seconds": seconds });
    write_bytes(&timing_path(manifest), format!("{body}\n").as_bytes())
}
