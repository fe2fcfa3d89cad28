//! Run manifests: what was asked for, what it resolved to and which inputs
//! it read. Written before any work starts so an aborted run still leaves
//! one behind.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::Command;

pub const MANIFEST_FILE: &str = "manifest.json";
/// Set to `1` to make `replay` refuse changed inputs or a different tool version.
pub const STRICT_ENV: &str = "MCN_STRICT";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub strict: bool,
    /// Parsed command line, defaults filled in.
    pub invocation: Command,
    /// Configs derived from the invocation and its inputs.
    pub resolved: serde_json::Value,
    pub inputs: BTreeMap<String, InputHash>,
}

pub fn strict_from_env() -> bool {
    std::env::var(STRICT_ENV).is_ok_and(|v| v == "1")
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Digest of a file, or of every file below a directory keyed by its
/// relative path in sorted order.
pub fn sha256_path(path: &Path) -> Result<String> {
    if !path.is_dir() {
        return sha256_file(path);
    }
    let mut files = Vec::new();
    collect_files(path, path, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for rel in files {
        let bytes = fs::read(path.join(&rel)).with_context(|| format!("reading {}", rel.display()))?;
        let name = rel.to_string_lossy().replace('\\', "/");
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = entry?.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            out.push(p.strip_prefix(root).expect("below root").to_path_buf());
        }
    }
    Ok(())
}

pub fn hash_inputs(inputs: &[(&str, &Path)]) -> Result<BTreeMap<String, InputHash>> {
    inputs
        .iter()
        .map(|(k, p)| {
            Ok((
                k.to_string(),
                InputHash {
                    path: p.to_path_buf(),
                    sha256: sha256_path(p)?,
                },
            ))
        })
        .collect()
}

impl RunManifest {
    pub fn new(
        invocation: &Command,
        out_dir: &Path,
        resolved: serde_json::Value,
        inputs: BTreeMap<String, InputHash>,
    ) -> Self {
        RunManifest {
            command: invocation.name().to_string(),
            tool_version: TOOL_VERSION.to_string(),
            seed: invocation.seed(),
            out_dir: out_dir.to_path_buf(),
            strict: strict_from_env(),
            invocation: invocation.clone(),
            resolved,
            inputs,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    /// Recomputes every input digest; lists all mismatches in one error.
    pub fn verify_inputs(&self) -> Result<()> {
        let mut bad = Vec::new();
        for (key, input) in &self.inputs {
            match sha256_path(&input.path) {
                Ok(h) if h == input.sha256 => {}
                Ok(h) => bad.push(format!("{key} ({}): recorded {}, now {h}", input.path.display(), input.sha256)),
                Err(e) => bad.push(format!("{key} ({}): {e:#}", input.path.display())),
            }
        }
        if !bad.is_empty() {
            bail!("inputs changed since the run was recorded:\n  {}", bad.join("\n  "));
        }
        Ok(())
    }
}
