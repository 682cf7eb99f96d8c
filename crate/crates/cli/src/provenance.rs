use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::{CliError, CliResult};

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Hash of the configuration's JSON form (object keys sorted).
pub fn config_hash(config: &Value) -> String {
    sha256_hex(&serde_json::to_vec(config).expect("json values serialize"))
}

/// `rec.pfm` -> `rec.provenance.json`; a directory gets `provenance.json` inside.
pub fn sidecar_for(output: &Path) -> PathBuf {
    if output.is_dir() {
        return output.join("provenance.json");
    }
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    output.with_file_name(format!("{stem}.provenance.json"))
}

/// Writes a provenance record: command, tool version, full configuration
/// and its hash, and content hashes of every input file.
pub fn record(output: &Path, command: &str, config: &impl Serialize, inputs: &[PathBuf]) -> CliResult<()> {
    let config = serde_json::to_value(config)?;
    let inputs: Vec<Value> = inputs
        .iter()
        .map(|p| {
            let digest = fs::read(p).map(|b| sha256_hex(&b)).ok();
            json!({ "path": p.display().to_string(), "sha256": digest })
        })
        .collect();
    let doc = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config_sha256": config_hash(&config),
        "config": config,
        "inputs": inputs,
        "output": output.display().to_string(),
    });
    let path = sidecar_for(output);
    fs::write(&path, serde_json::to_string_pretty(&doc)?)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}
