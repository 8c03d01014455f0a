//! Artifact headers, vocabulary-hash checks and the preprocessed data directory layout.

use std::path::Path;

use lipread::config::RunConfig;
use lipread::manifest::Manifest;
use lipread::roi::NormStats;
use lipread::tokenizer::Vocabulary;
use lipread::Error;

use crate::Failure;

pub const DATA_MANIFEST: &str = "manifest.tsv";
pub const DATA_STATS: &str = "stats.txt";
const HASH_KEY: &str = "vocab_hash = ";

pub struct Context {
    pub cfg: RunConfig,
    pub vocab: Vocabulary,
}

impl Context {
    /// Provenance lines echoed into every text artifact: command, vocabulary hash and the
    /// full configuration.
    pub fn header(&self, command: &str) -> Vec<String> {
        let mut lines = vec![
            format!("lipread {command} {}", env!("CARGO_PKG_VERSION")),
            format!("{HASH_KEY}{}", self.vocab.hash()),
        ];
        lines.extend(self.cfg.to_lines());
        lines
    }

    pub fn header_text(&self, command: &str) -> String {
        self.header(command).iter().map(|l| format!("# {l}\n")).collect()
    }

    pub fn model_config(&self) -> Result<lipread::nn::ModelConfig, Failure> {
        Ok(lipread::nn::ModelConfig {
            vocab_size: self.vocab.len(),
            ..self.cfg.model()?
        })
    }
}

pub fn write(path: &Path, content: &str) -> Result<(), Failure> {
    std::fs::write(path, content).map_err(|e| Error::io(path, e).into())
}

pub fn create_dir(path: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e).into())
}

pub fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e).into())
}

/// The vocabulary hash recorded in a `#` header, if any.
pub fn header_hash(text: &str) -> Option<&str> {
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .find_map(|l| l.trim_start_matches('#').trim().strip_prefix(HASH_KEY))
}

pub fn check_hash(what: &str, found: Option<&str>, vocab: &Vocabulary) -> Result<(), Failure> {
    let expected = vocab.hash();
    match found {
        Some(h) if h == expected => Ok(()),
        Some(h) => Err(Error::VocabMismatch {
            what: what.to_string(),
            expected,
            found: h.to_string(),
        }
        .into()),
        None => Err(Failure::Data(format!("{what} carries no vocabulary hash"))),
    }
}

/// A preprocessed directory: ROI clips, their manifest and the normalization statistics.
pub struct DataDir {
    pub manifest: Manifest,
    pub stats: NormStats,
}

impl DataDir {
    pub fn load(dir: &Path, vocab: &Vocabulary) -> Result<Self, Failure> {
        let stats_path = dir.join(DATA_STATS);
        let text = read(&stats_path)?;
        check_hash(&stats_path.display().to_string(), header_hash(&text), vocab)?;
        let stats = NormStats::from_text(&text).map_err(|m| Error::format(&stats_path, m))?;
        let manifest_path = dir.join(DATA_MANIFEST);
        check_hash(&manifest_path.display().to_string(), header_hash(&read(&manifest_path)?), vocab)?;
        let manifest = Manifest::load(&manifest_path)?;
        Ok(Self { manifest, stats })
    }
}
