//! Corpus-level error analysis: WER histograms, Zipf curves and vocabulary coverage.

use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};

pub const HISTOGRAM_BINS: usize = 10;

/// Counts per-utterance WERs into `[0,10), [10,20), …, [90,100]`. Values above 100 land in
/// the last bin.
pub fn wer_histogram(wers: &[f64]) -> [usize; HISTOGRAM_BINS] {
    let mut bins = [0usize; HISTOGRAM_BINS];
    for &w in wers {
        let idx = ((w / 10.0).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1);
        bins[idx] += 1;
    }
    bins
}

/// Word type → count, with deterministic iteration order.
pub type WordCounts = BTreeMap<String, u64>;

pub fn count_words<'a>(tokens: impl IntoIterator<Item = &'a str>) -> WordCounts {
    let mut counts = WordCounts::new();
    for t in tokens {
        *counts.entry(t.to_string()).or_default() += 1;
    }
    counts
}

/// Types sorted by descending frequency, ties alphabetical.
pub fn rank_types(counts: &WordCounts) -> Vec<(&str, u64)> {
    let mut ranked: Vec<_> = counts.iter().map(|(w, &c)| (w.as_str(), c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZipfPoint {
    pub rank: usize,
    pub word: String,
    pub count: u64,
    /// count / count of the rank-1 word
    pub relative_frequency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZipfCurve {
    pub points: Vec<ZipfPoint>,
    /// Least-squares slope of log relative frequency on log rank.
    pub slope: f64,
}

pub fn zipf_curve_from_counts(counts: &WordCounts) -> Result<ZipfCurve> {
    let ranked = rank_types(counts);
    let Some(&(_, top)) = ranked.first() else {
        return Err(Error::invalid("zipf analysis needs a non-empty token stream"));
    };
    let points: Vec<ZipfPoint> = ranked
        .iter()
        .enumerate()
        .map(|(i, &(w, c))| ZipfPoint {
            rank: i + 1,
            word: w.to_string(),
            count: c,
            relative_frequency: c as f64 / top as f64,
        })
        .collect();
    let slope = if points.len() < 2 {
        0.0
    } else {
        let xs: Vec<f64> = points.iter().map(|p| (p.rank as f64).ln()).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.relative_frequency.ln()).collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        sxy / sxx
    };
    Ok(ZipfCurve { points, slope })
}

pub fn zipf_curve<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Result<ZipfCurve> {
    zipf_curve_from_counts(&count_words(tokens))
}

/// A count and its percentage of the intersection's first operand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overlap {
    pub count: usize,
    pub percent: f64,
}

impl Overlap {
    fn new(count: usize, of: usize) -> Self {
        let percent = if of == 0 {
            0.0
        } else {
            100.0 * count as f64 / of as f64
        };
        Self { count, percent }
    }
}

impl std::fmt::Display for Overlap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({:.1}%)", self.count, self.percent)
    }
}

/// Train/test vocabulary statistics in the layout of a coverage table.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageStats {
    pub train_v: usize,
    pub test_v: usize,
    pub test_rw: usize,
    pub top_n: usize,
    pub test_v_in_train_v: Overlap,
    pub test_v_in_top_v: Overlap,
    pub test_rw_in_train_v: Overlap,
    pub test_rw_in_top_v: Overlap,
}

pub fn coverage_stats<'a>(
    train: impl IntoIterator<Item = &'a str>,
    test: impl IntoIterator<Item = &'a str>,
    top_n: usize,
) -> Result<CoverageStats> {
    let train_counts = count_words(train);
    let test_tokens: Vec<&str> = test.into_iter().collect();
    if train_counts.is_empty() || test_tokens.is_empty() {
        return Err(Error::invalid("coverage needs non-empty train and test streams"));
    }
    if top_n == 0 {
        return Err(Error::invalid("top-N must be at least 1"));
    }
    let mut top_n = top_n;
    if top_n > train_counts.len() {
        log::warn!(
            "top-N {top_n} exceeds the {} training types; clamping",
            train_counts.len()
        );
        top_n = train_counts.len();
    }
    let top: HashSet<&str> = rank_types(&train_counts)
        .into_iter()
        .take(top_n)
        .map(|(w, _)| w)
        .collect();
    let test_types: HashSet<&str> = test_tokens.iter().copied().collect();
    let in_train = |w: &str| train_counts.contains_key(w);
    let in_top = |w: &str| top.contains(w);
    let count = |items: &mut dyn Iterator<Item = &str>, pred: &dyn Fn(&str) -> bool| {
        items.filter(|w| pred(w)).count()
    };

    let test_v = test_types.len();
    let test_rw = test_tokens.len();
    Ok(CoverageStats {
        train_v: train_counts.len(),
        test_v,
        test_rw,
        top_n,
        test_v_in_train_v: Overlap::new(count(&mut test_types.iter().copied(), &in_train), test_v),
        test_v_in_top_v: Overlap::new(count(&mut test_types.iter().copied(), &in_top), test_v),
        test_rw_in_train_v: Overlap::new(count(&mut test_tokens.iter().copied(), &in_train), test_rw),
        test_rw_in_top_v: Overlap::new(count(&mut test_tokens.iter().copied(), &in_top), test_rw),
    })
}
