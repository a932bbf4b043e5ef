use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::trainer::EpochRecord;
use crate::error::{Error, Result};

/// Short sha256 of a file's bytes.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(&Sha256::digest(&bytes)[..8]))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub step: String,
    /// Configuration snapshot in `key = value` form.
    #[serde(default)]
    pub config: Option<String>,
    /// Input path to content hash.
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    #[serde(default)]
    pub outputs: Vec<String>,
    /// Per-model epoch history.
    #[serde(default)]
    pub history: BTreeMap<String, Vec<EpochRecord>>,
    #[serde(default)]
    pub metrics: serde_json::Value,
    pub seconds: f64,
}

impl ManifestEntry {
    pub fn new(step: impl Into<String>) -> Self {
        Self {
            step: step.into(),
            ..Self::default()
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), file_hash(path)?);
        Ok(())
    }
}

/// Append-only record of the steps run in one output directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub entries: Vec<ManifestEntry>,
}

impl RunManifest {
    /// Reads the manifest, or an empty one when the file does not exist.
    pub fn load(path: &Path) -> Result<Self> {
        match fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    /// Appends `entry` to the manifest at `path` after checking that its
    /// outputs exist and its histories are complete.
    pub fn append(path: &Path, entry: ManifestEntry) -> Result<()> {
        for out in &entry.outputs {
            if !Path::new(out).exists() {
                return Err(Error::Internal(format!("manifest output {out} does not exist")));
            }
        }
        for (model, hist) in &entry.history {
            if hist.iter().enumerate().any(|(i, r)| r.epoch != i + 1) {
                return Err(Error::Internal(format!("history of {model} is not one entry per epoch")));
            }
        }
        let mut m = Self::load(path)?;
        m.entries.push(entry);
        let text = serde_json::to_string_pretty(&m).map_err(|e| Error::Internal(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::trainer::Phase;

    fn rec(epoch: usize) -> EpochRecord {
        EpochRecord {
            epoch,
            phase: Phase::Full,
            loss: 1.0,
            dev_em: None,
            dev_f1: None,
            seconds: 0.0,
        }
    }

    #[test]
    fn appends_and_checks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let out = dir.path().join("a.bin");
        fs::write(&out, b"x").unwrap();

        let mut e = ManifestEntry::new("one");
        e.input(&out).unwrap();
        e.outputs.push(out.display().to_string());
        e.history.insert("m".into(), vec![rec(1), rec(2)]);
        RunManifest::append(&path, e.clone()).unwrap();
        RunManifest::append(&path, ManifestEntry::new("two")).unwrap();
        let m = RunManifest::load(&path).unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.entries[0], e);

        let mut bad = ManifestEntry::new("bad");
        bad.outputs.push(dir.path().join("missing").display().to_string());
        assert!(RunManifest::append(&path, bad).is_err());
        let mut gap = ManifestEntry::new("gap");
        gap.history.insert("m".into(), vec![rec(1), rec(3)]);
        assert!(RunManifest::append(&path, gap).is_err());
        assert_eq!(RunManifest::load(&path).unwrap().entries.len(), 2);
    }
}
