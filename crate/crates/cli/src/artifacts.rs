use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cefr_cascade::provenance::{sha256_hex, sidecar_path, ProvenanceBlock};
use serde::Serialize;

/// Writes `bytes` to `dir/name` and its provenance sidecar next to it.
pub fn write_artifact(dir: &Path, name: &str, bytes: &[u8], provenance: ProvenanceBlock) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
    let block = provenance.with_artifact(bytes);
    let mut sidecar = serde_json::to_string_pretty(&block)?;
    sidecar.push('\n');
    fs::write(sidecar_path(&path), sidecar)?;
    Ok(path)
}

pub fn jsonl<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r).expect("rows serialize");
        out.push(b'\n');
    }
    out
}

pub fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("value serializes");
    out.push(b'\n');
    out
}

/// An artifact read back from disk together with its sidecar, when one
/// exists.
pub struct Loaded {
    pub path: PathBuf,
    pub text: String,
    pub provenance: Option<ProvenanceBlock>,
}

impl Loaded {
    pub fn digest(&self) -> String {
        sha256_hex(self.text.as_bytes())
    }
}

/// Reads an artifact and fails if its sidecar records a different digest.
pub fn read_verified(path: &Path) -> Result<Loaded> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let side = sidecar_path(path);
    let provenance = match fs::read_to_string(&side) {
        Ok(raw) => Some(
            serde_json::from_str::<ProvenanceBlock>(&raw)
                .with_context(|| format!("invalid provenance {}", side.display()))?,
        ),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e).with_context(|| format!("cannot read {}", side.display())),
    };
    if let Some(p) = &provenance {
        if !p.artifact_matches(text.as_bytes()) {
            bail!(
                "{} does not match the digest in {}; it was modified after it was written",
                path.display(),
                side.display()
            );
        }
    }
    Ok(Loaded {
        path: path.to_path_buf(),
        text,
        provenance,
    })
}

pub fn parse_jsonl<T: serde::de::DeserializeOwned>(loaded: &Loaded) -> Result<Vec<T>> {
    loaded
        .text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", loaded.path.display(), i + 1)))
        .collect()
}
