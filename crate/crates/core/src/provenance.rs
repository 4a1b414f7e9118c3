//! Content digests and provenance blocks for persisted artifacts.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceBlock {
    pub tool_version: String,
    /// Name of the step that wrote the artifact.
    pub command: String,
    pub config_digest: String,
    /// Logical input name to sha256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    /// Digest of the artifact itself, checked by consumers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact_digest: Option<String>,
}

impl ProvenanceBlock {
    pub fn new(command: impl Into<String>, config_bytes: &[u8]) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_string(),
            command: command.into(),
            config_digest: sha256_hex(config_bytes),
            inputs: BTreeMap::new(),
            artifact_digest: None,
        }
    }

    pub fn with_artifact(mut self, bytes: &[u8]) -> Self {
        self.artifact_digest = Some(sha256_hex(bytes));
        self
    }

    /// False only when a digest is recorded and differs.
    pub fn artifact_matches(&self, bytes: &[u8]) -> bool {
        self.artifact_digest.as_deref().is_none_or(|d| d == sha256_hex(bytes))
    }

    pub fn with_input(mut self, name: impl Into<String>, bytes: &[u8]) -> Self {
        self.inputs.insert(name.into(), sha256_hex(bytes));
        self
    }

    /// Names of inputs whose recorded digest differs from `bytes`.
    pub fn mismatches<'a>(&self, actual: impl IntoIterator<Item = (&'a str, &'a [u8])>) -> Vec<String> {
        actual
            .into_iter()
            .filter(|(name, bytes)| self.inputs.get(*name).is_some_and(|d| *d != sha256_hex(bytes)))
            .map(|(name, _)| name.to_string())
            .collect()
    }
}

/// Sidecar written next to an artifact as `<artifact>.provenance.json`.
pub fn sidecar_path(artifact: &Path) -> std::path::PathBuf {
    let mut name = artifact.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".provenance.json");
    artifact.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn mismatch_detection() {
        let p = ProvenanceBlock::new("test", b"cfg")
            .with_input("dev", b"one")
            .with_input("train", b"two");
        assert!(p.mismatches([("dev", &b"one"[..]), ("train", &b"two"[..])]).is_empty());
        assert_eq!(p.mismatches([("dev", &b"changed"[..])]), vec!["dev".to_string()]);
        // unknown inputs are not reported
        assert!(p.mismatches([("other", &b"x"[..])]).is_empty());
    }

    #[test]
    fn artifact_check() {
        let p = ProvenanceBlock::new("test", b"cfg");
        assert!(p.artifact_matches(b"anything"));
        let p = p.with_artifact(b"body");
        assert!(p.artifact_matches(b"body"));
        assert!(!p.artifact_matches(b"body2"));
    }

    #[test]
    fn sidecar_naming() {
        assert_eq!(
            sidecar_path(Path::new("out/matrix.json")),
            Path::new("out/matrix.json.provenance.json")
        );
    }
}
