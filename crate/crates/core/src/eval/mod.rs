//! Scoring and error analysis of recognition output.

mod analysis;
mod bootstrap;
mod metrics;
mod report;

pub use analysis::{
    count_words, coverage_stats, rank_types, wer_histogram, zipf_curve, zipf_curve_from_counts,
    CoverageStats, Overlap, WordCounts, ZipfCurve, ZipfPoint, HISTOGRAM_BINS,
};
pub use bootstrap::{
    bootstrap_ci, bootstrap_counts, percentile, ConfidenceInterval, DEFAULT_REPLICATES,
};
pub use metrics::{cer, chars, edit_distance, pooled_rate, wer, words, EditCounts, UttResult};
pub use report::{
    coverage_tsv, histogram_tsv, parse_id_text, read_id_text, score_pairs, zipf_tsv, EvalReport,
};
