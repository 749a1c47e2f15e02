//! JSON-lines dataset manifests: one utterance record per line, paths
//! stored relative to the manifest file so a corpus directory can move as
//! a unit. Loading resolves every path and verifies it exists.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::formats::atomic_write;

/// One utterance. Either `audio` (a WAV to be front-ended) or `features`
/// (a precomputed AFM1 file) must be present; trajectories and labels are
/// optional supervision.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub utt_id: String,
    pub speaker_id: String,
    pub domain: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    pub n_frames: usize,
}

impl ManifestEntry {
    fn paths_mut(&mut self) -> impl Iterator<Item = &mut PathBuf> {
        [
            self.audio.as_mut(),
            self.features.as_mut(),
            self.trajectory.as_mut(),
            self.labels.as_mut(),
        ]
        .into_iter()
        .flatten()
    }

    fn paths(&self) -> impl Iterator<Item = &PathBuf> {
        [
            self.audio.as_ref(),
            self.features.as_ref(),
            self.trajectory.as_ref(),
            self.labels.as_ref(),
        ]
        .into_iter()
        .flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Self {
        Manifest { entries }
    }

    /// Write as JSON-lines. Paths are written exactly as stored.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for entry in &self.entries {
            let line = serde_json::to_string(entry)
                .map_err(|e| Error::Internal(format!("manifest serialization: {e}")))?;
            out.push_str(&line);
            out.push('\n');
        }
        atomic_write(path, out.as_bytes())
    }

    /// Parse, resolve paths against the manifest's directory, and validate:
    /// utt_ids must be unique, every record needs audio or features, and
    /// every referenced file must exist.
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut entries = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let lineno = lineno + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut entry: ManifestEntry = serde_json::from_str(line)
                .map_err(|e| Error::format(path, format!("line {lineno}: {e}")))?;
            if let Some(first) = seen.insert(entry.utt_id.clone(), lineno) {
                return Err(Error::Data(format!(
                    "{}: duplicate utt_id '{}' (lines {first} and {lineno})",
                    path.display(),
                    entry.utt_id,
                )));
            }
            if entry.audio.is_none() && entry.features.is_none() {
                return Err(Error::Data(format!(
                    "{}: utterance '{}' (line {lineno}) has neither audio nor features",
                    path.display(),
                    entry.utt_id
                )));
            }
            for p in entry.paths_mut() {
                if p.is_relative() {
                    *p = base.join(&p);
                }
            }
            for p in entry.paths() {
                if !p.exists() {
                    return Err(Error::Data(format!(
                        "{}: utterance '{}' references missing file {}",
                        path.display(),
                        entry.utt_id,
                        p.display()
                    )));
                }
            }
            entries.push(entry);
        }
        Ok(Manifest { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn filter(&self, pred: impl Fn(&ManifestEntry) -> bool) -> Manifest {
        Manifest {
            entries: self.entries.iter().filter(|e| pred(e)).cloned().collect(),
        }
    }

    pub fn by_domain(&self, domain: &str) -> Manifest {
        self.filter(|e| e.domain == domain)
    }

    pub fn by_speaker(&self, speaker: &str) -> Manifest {
        self.filter(|e| e.speaker_id == speaker)
    }
}
