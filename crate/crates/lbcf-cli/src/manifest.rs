//! Reproducibility manifests. Every subcommand writes `run.json` into its
//! output directory: the tool version, the subcommand, every resolved
//! parameter, and SHA-256 digests of all inputs and outputs. No timestamps
//! or host details — re-running the same manifest must produce the same
//! bytes, so the manifest itself stays reproducible too.

use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub params: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    use std::io::Read;
    let mut file = std::fs::File::open(path)
        .with_context(|| format!("cannot open {} for hashing", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buffer = [0u8; 64 * 1024];
    loop {
        let read = file.read(&mut buffer)?;
        if read == 0 {
            break;
        }
        hasher.update(&buffer[..read]);
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

fn digest_all(paths: &[&Path]) -> anyhow::Result<Vec<FileDigest>> {
    paths
        .iter()
        .map(|p| {
            Ok(FileDigest {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

/// Writes `<out_dir>/run.json` and returns its path. Call after all outputs
/// exist so their digests can be recorded.
pub fn write_manifest(
    out_dir: &Path,
    command: &str,
    params: serde_json::Value,
    inputs: &[&Path],
    outputs: &[&Path],
) -> anyhow::Result<PathBuf> {
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        params,
        inputs: digest_all(inputs)?,
        outputs: digest_all(outputs)?,
    };
    let path = out_dir.join("run.json");
    let file = std::fs::File::create(&path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &manifest)?;
    Ok(path)
}
