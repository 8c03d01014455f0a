use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::analysis::{wer_histogram, CoverageStats, ZipfCurve, HISTOGRAM_BINS};
use super::bootstrap::{bootstrap_ci, ConfidenceInterval};
use super::metrics::{cer, wer, UttResult};

/// Parses `utterance_id<TAB>text` lines. Blank lines are skipped; a missing tab means empty
/// text.
pub fn parse_id_text(content: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut seen = HashMap::new();
    for (n, line) in content.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, text) = line.split_once('\t').unwrap_or((line, ""));
        if seen.insert(id.to_string(), n).is_some() {
            return Err(Error::invalid(format!("duplicate utterance id {id:?}")));
        }
        out.push((id.to_string(), text.trim().to_string()));
    }
    Ok(out)
}

pub fn read_id_text(path: &Path) -> Result<Vec<(String, String)>> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_id_text(&content).map_err(|e| Error::format(path, e.to_string()))
}

/// Scores hypotheses against references in reference order. A reference without a
/// hypothesis is scored against the empty string.
pub fn score_pairs(refs: &[(String, String)], hyps: &[(String, String)]) -> Vec<UttResult> {
    let by_id: HashMap<&str, &str> = hyps.iter().map(|(i, t)| (i.as_str(), t.as_str())).collect();
    for (id, _) in hyps {
        if !refs.iter().any(|(r, _)| r == id) {
            log::warn!("hypothesis {id:?} has no reference and is ignored");
        }
    }
    refs.iter()
        .map(|(id, r)| {
            let h = by_id.get(id.as_str()).copied().unwrap_or_else(|| {
                log::warn!("no hypothesis for {id:?}; scoring as empty");
                ""
            });
            UttResult::score(id.clone(), r, h)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub results: Vec<UttResult>,
    pub wer: f64,
    pub cer: f64,
    pub ci: ConfidenceInterval,
    pub histogram: [usize; HISTOGRAM_BINS],
}

impl EvalReport {
    pub fn build(results: Vec<UttResult>, replicates: usize, seed: u64) -> Result<Self> {
        let wer = wer(&results)?;
        let cer = cer(&results)?;
        let ci = bootstrap_ci(&results, replicates, seed)?;
        let per_utt: Vec<f64> = results.iter().filter_map(UttResult::wer).collect();
        let histogram = wer_histogram(&per_utt);
        Ok(Self {
            results,
            wer,
            cer,
            ci,
            histogram,
        })
    }

    pub fn summary(&self) -> String {
        format!(
            "WER {:.2}% [{:.2}, {:.2}] CER {:.2}%",
            self.wer, self.ci.lo, self.ci.hi, self.cer
        )
    }

    /// Per-utterance table followed by the summary line. `header` lines are echoed as
    /// `#` comments.
    pub fn to_tsv(&self, header: &[String]) -> String {
        let mut out = String::new();
        for h in header {
            writeln!(out, "# {h}").unwrap();
        }
        writeln!(
            out,
            "# corpus rates pool edit counts over utterances; 95% percentile bootstrap over utterances, replicates={} seed={}",
            self.ci.replicates, self.ci.seed
        )
        .unwrap();
        out.push_str(
            "id\tref_words\tsub\tdel\tins\twer\tref_chars\tchar_errors\tcer\treference\thypothesis\n",
        );
        for r in &self.results {
            let fmt = |x: Option<f64>| x.map_or_else(|| "NA".to_string(), |v| format!("{v:.2}"));
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.id,
                r.ref_words,
                r.word.substitutions,
                r.word.deletions,
                r.word.insertions,
                fmt(r.wer()),
                r.ref_chars,
                r.chars.errors(),
                fmt(r.cer()),
                r.reference,
                r.hypothesis
            )
            .unwrap();
        }
        writeln!(out, "{}", self.summary()).unwrap();
        out
    }
}

pub fn histogram_tsv(bins: &[usize; HISTOGRAM_BINS]) -> String {
    let mut out = String::from("bin_lo\tbin_hi\tcount\n");
    for (i, c) in bins.iter().enumerate() {
        writeln!(out, "{}\t{}\t{c}", i * 10, (i + 1) * 10).unwrap();
    }
    out
}

pub fn zipf_tsv(curve: &ZipfCurve) -> String {
    let mut out = format!("# slope {:.6}\nrank\tword\tcount\trelative_frequency\tzipf_law\n", curve.slope);
    for p in &curve.points {
        writeln!(
            out,
            "{}\t{}\t{}\t{:.8}\t{:.8}",
            p.rank,
            p.word,
            p.count,
            p.relative_frequency,
            1.0 / p.rank as f64
        )
        .unwrap();
    }
    out
}

pub fn coverage_tsv(stats: &CoverageStats) -> String {
    let mut out = String::from("statistic\tvalue\n");
    writeln!(out, "train-v\t{}", stats.train_v).unwrap();
    writeln!(out, "test-v\t{}", stats.test_v).unwrap();
    writeln!(out, "test-rw\t{}", stats.test_rw).unwrap();
    writeln!(out, "top-n\t{}", stats.top_n).unwrap();
    writeln!(out, "test-v∩train-v\t{}", stats.test_v_in_train_v).unwrap();
    writeln!(out, "test-v∩top-v\t{}", stats.test_v_in_top_v).unwrap();
    writeln!(out, "test-rw∩train-v\t{}", stats.test_rw_in_train_v).unwrap();
    writeln!(out, "test-rw∩top-v\t{}", stats.test_rw_in_top_v).unwrap();
    out
}
