//! Run manifests and content hashes.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

/// Hex sha256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d.iter().map(|b| format!("{b:02x}")).collect()
}

/// Git-style object hash: sha256 over `blob <len>\0<content>`.
pub fn blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Short hash of the resolved config, stamped on every result row.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serialises");
    sha256_hex(json.as_bytes())[..16].to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub experiment: String,
    pub kind: String,
    pub config_hash: String,
    /// Blob hash of the config file as read from disk.
    pub input_hash: String,
    pub input_path: String,
    pub fast: bool,
    pub seed_override: Option<Vec<u64>>,
    pub reductions: Vec<String>,
    pub rows: usize,
    pub results_sha256: String,
    pub config: ExperimentConfig,
}
