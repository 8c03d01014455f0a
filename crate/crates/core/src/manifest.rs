//! Corpus manifests: `utterance_id<TAB>frames_path<TAB>landmarks_path<TAB>transcript` rows.
//! Relative paths resolve against the manifest's directory.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const MANIFEST_HEADER: &str = "utterance_id\tframes_path\tlandmarks_path\ttranscript";

/// Marker for a row whose clip has no landmark file (already-aligned ROI clips).
pub const NO_LANDMARKS: &str = "-";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub frames: PathBuf,
    pub landmarks: Option<PathBuf>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("{MANIFEST_HEADER}\n");
        for e in &self.entries {
            let lm = e
                .landmarks
                .as_ref()
                .map_or_else(|| NO_LANDMARKS.to_string(), |p| p.display().to_string());
            writeln!(out, "{}\t{}\t{lm}\t{}", e.id, e.frames.display(), e.text).unwrap();
        }
        out
    }

    pub fn from_tsv(text: &str) -> std::result::Result<Self, String> {
        let mut entries = Vec::new();
        let mut ids = HashSet::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') || line == MANIFEST_HEADER {
                continue;
            }
            let fields: Vec<&str> = line.splitn(4, '\t').collect();
            if fields.len() < 3 {
                return Err(format!("line {}: expected 4 tab-separated fields", n + 1));
            }
            let id = fields[0].to_string();
            if id.is_empty() || !ids.insert(id.clone()) {
                return Err(format!("line {}: empty or duplicate utterance id {id:?}", n + 1));
            }
            entries.push(ManifestEntry {
                id,
                frames: PathBuf::from(fields[1]),
                landmarks: (fields[2] != NO_LANDMARKS).then(|| PathBuf::from(fields[2])),
                text: fields.get(3).copied().unwrap_or("").to_string(),
            });
        }
        Ok(Self { entries })
    }

    /// Loads a manifest and makes every relative path absolute w.r.t. its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::from_tsv(&text).map_err(|msg| Error::format(path, msg))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for e in &mut m.entries {
            e.frames = base.join(&e.frames);
            e.landmarks = e.landmarks.as_ref().map(|p| base.join(p));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    /// `id<TAB>text` lines, the reference format consumed by evaluation.
    pub fn transcripts(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            writeln!(out, "{}\t{}", e.id, e.text).unwrap();
        }
        out
    }
}
