use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use receipt_ner::backend::GenerationParams;
use receipt_ner::ocr_noise::Variant;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::BackendSection;

/// Provenance of one extraction run, written next to its predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_id: String,
    pub variant: Variant,
    pub base_seed: u64,
    pub backend_digest: String,
    pub template_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub rows: usize,
    pub failed_rows: usize,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn sha256_parts(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex(&h.finalize())
}

/// Digest of everything that changes what the backend returns.
pub fn backend_digest(backend: &BackendSection, params: &GenerationParams) -> String {
    let b = serde_json::to_vec(backend).expect("backend config serializes");
    let p = serde_json::to_vec(params).expect("params serialize");
    sha256_parts(&[&b, &p])
}

/// First 16 hex digits over the variant, seed and the two digests.
pub fn config_id(
    variant: Variant,
    seed: u64,
    backend_digest: &str,
    template_digest: &str,
) -> String {
    let variant = variant.to_string();
    let mut id = sha256_parts(&[
        variant.as_bytes(),
        &seed.to_le_bytes(),
        backend_digest.as_bytes(),
        template_digest.as_bytes(),
    ]);
    id.truncate(16);
    id
}

pub fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    /// Hash of the manifest with timestamps left out, so reruns agree.
    pub fn digest(&self) -> String {
        let stable = RunManifest {
            started_unix: 0,
            finished_unix: 0,
            ..self.clone()
        };
        let bytes = serde_json::to_vec(&stable).expect("manifest serializes");
        sha256_parts(&[&bytes])
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}

/// `preds.jsonl` → `preds.jsonl.manifest.json`.
pub fn sidecar_path(predictions: &Path) -> PathBuf {
    let mut name = predictions.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}
