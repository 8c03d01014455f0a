//! Percentile bootstrap over utterances for corpus-level error rates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

use super::metrics::{pooled_rate, UttResult};

pub const DEFAULT_REPLICATES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceInterval {
    /// Corpus rate of the original (unresampled) set.
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl ConfidenceInterval {
    pub fn half_width(&self) -> f64 {
        (self.hi - self.lo) / 2.0
    }
}

/// Linear interpolation between closest ranks on sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// 95% percentile interval of a pooled rate. Each item contributes `(errors, reference
/// units)`; replicate `b` draws from its own stream `(seed, b)` so the result does not depend
/// on how replicates are scheduled across threads.
pub fn bootstrap_counts(
    items: &[(usize, usize)],
    replicates: usize,
    seed: u64,
) -> Result<ConfidenceInterval> {
    if items.is_empty() {
        return Err(Error::invalid("bootstrap needs at least one utterance"));
    }
    if replicates == 0 {
        return Err(Error::invalid("bootstrap needs at least one replicate"));
    }
    if replicates < 100 {
        log::warn!("only {replicates} bootstrap replicates; the interval will be coarse");
    }
    let total_err: usize = items.iter().map(|i| i.0).sum();
    let total_ref: usize = items.iter().map(|i| i.1).sum();
    let estimate = pooled_rate(total_err, total_ref)?;
    let n = items.len();
    let mut rates: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let (mut e, mut r) = (0usize, 0usize);
            for _ in 0..n {
                let (ei, ri) = items[rng.random_range(0..n)];
                e += ei;
                r += ri;
            }
            // A replicate that drew only empty references carries no information.
            if r == 0 {
                f64::NAN
            } else {
                100.0 * e as f64 / r as f64
            }
        })
        .collect();
    rates.retain(|x| !x.is_nan());
    if rates.is_empty() {
        return Err(Error::Degenerate("every bootstrap replicate was empty".into()));
    }
    rates.sort_by(f64::total_cmp);
    let lo = percentile(&rates, 0.025).min(estimate);
    let hi = percentile(&rates, 0.975).max(estimate);
    Ok(ConfidenceInterval {
        estimate,
        lo,
        hi,
        replicates,
        seed,
    })
}

/// Word-level bootstrap interval for a scored corpus.
pub fn bootstrap_ci(
    results: &[UttResult],
    replicates: usize,
    seed: u64,
) -> Result<ConfidenceInterval> {
    let items: Vec<_> = results
        .iter()
        .map(|r| (r.word.errors(), r.ref_words))
        .collect();
    bootstrap_counts(&items, replicates, seed)
}
