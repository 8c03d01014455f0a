use crate::error::{Error, Result};

/// Edit operation counts of a minimum-cost alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Levenshtein alignment with unit costs. Among minimum-cost alignments the one with the
/// fewest insertions plus deletions wins; remaining ties back-trace as substitution, then
/// deletion, then insertion.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    // (cost, insertions + deletions), compared lexicographically
    let mut dp = vec![(0usize, 0usize); (n + 1) * w];
    for i in 1..=n {
        dp[i * w] = (i, i);
    }
    for j in 1..=m {
        dp[j] = (j, j);
    }
    for i in 1..=n {
        for j in 1..=m {
            let same = reference[i - 1] == hypothesis[j - 1];
            let (c, g) = dp[(i - 1) * w + j - 1];
            let diag = (c + usize::from(!same), g);
            let (c, g) = dp[(i - 1) * w + j];
            let del = (c + 1, g + 1);
            let (c, g) = dp[i * w + j - 1];
            let ins = (c + 1, g + 1);
            dp[i * w + j] = diag.min(del).min(ins);
        }
    }
    let mut counts = EditCounts::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dp[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            let (c, g) = dp[(i - 1) * w + j - 1];
            if (c + usize::from(!same), g) == here {
                if !same {
                    counts.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 {
            let (c, g) = dp[(i - 1) * w + j];
            if (c + 1, g + 1) == here {
                counts.deletions += 1;
                i -= 1;
                continue;
            }
        }
        counts.insertions += 1;
        j -= 1;
    }
    counts
}

pub fn words(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Characters of the whitespace-normalized text, spaces included.
pub fn chars(text: &str) -> Vec<char> {
    words(text).join(" ").chars().collect()
}

/// Word- and character-level scoring of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct UttResult {
    pub id: String,
    pub reference: String,
    pub hypothesis: String,
    pub word: EditCounts,
    pub ref_words: usize,
    pub chars: EditCounts,
    pub ref_chars: usize,
}

impl UttResult {
    pub fn score(id: impl Into<String>, reference: &str, hypothesis: &str) -> Self {
        let (rw, hw) = (words(reference), words(hypothesis));
        let (rc, hc) = (chars(reference), chars(hypothesis));
        Self {
            id: id.into(),
            reference: reference.to_string(),
            hypothesis: hypothesis.to_string(),
            word: edit_distance(&rw, &hw),
            ref_words: rw.len(),
            chars: edit_distance(&rc, &hc),
            ref_chars: rc.len(),
        }
    }

    /// Per-utterance WER in percent; `None` when the reference is empty.
    pub fn wer(&self) -> Option<f64> {
        (self.ref_words > 0).then(|| 100.0 * self.word.errors() as f64 / self.ref_words as f64)
    }

    pub fn cer(&self) -> Option<f64> {
        (self.ref_chars > 0).then(|| 100.0 * self.chars.errors() as f64 / self.ref_chars as f64)
    }
}

/// Pooled error rate: total errors over total reference units, in percent. Not clamped.
pub fn pooled_rate(errors: usize, reference_units: usize) -> Result<f64> {
    if reference_units == 0 {
        return Err(Error::invalid("no reference units to score against"));
    }
    Ok(100.0 * errors as f64 / reference_units as f64)
}

/// Corpus WER in percent, pooling counts across utterances.
pub fn wer(results: &[UttResult]) -> Result<f64> {
    let errors = results.iter().map(|r| r.word.errors()).sum();
    let refs = results.iter().map(|r| r.ref_words).sum();
    pooled_rate(errors, refs)
}

/// Corpus CER in percent (spaces count as characters).
pub fn cer(results: &[UttResult]) -> Result<f64> {
    let errors = results.iter().map(|r| r.chars.errors()).sum();
    let refs = results.iter().map(|r| r.ref_chars).sum();
    pooled_rate(errors, refs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn round1(x: f64) -> f64 {
        (x * 10.0).round() / 10.0
    }

    #[test]
    fn identical_and_empty() {
        assert_eq!(edit_distance(&["a", "b"], &["a", "b"]), EditCounts::default());
        let c = edit_distance(&["a", "b", "c"], &[] as &[&str]);
        assert_eq!((c.substitutions, c.deletions, c.insertions), (0, 3, 0));
        let c = edit_distance(&[] as &[&str], &["x"]);
        assert_eq!(c.insertions, 1);
    }

    #[test]
    fn prefers_substitution_on_ties() {
        let c = edit_distance(&["a", "b"], &["a", "c"]);
        assert_eq!((c.substitutions, c.deletions, c.insertions), (1, 0, 0));
        let c = edit_distance(&["a", "b", "c"], &["x", "y"]);
        assert_eq!((c.substitutions, c.deletions, c.insertions), (2, 1, 0));
    }

    #[test]
    fn golden_word_and_char_rates() {
        let r = UttResult::score(
            "u1",
            "pena con hasta tres años de prision",
            "pero esta traslados de prision",
        );
        assert_eq!(r.word.errors(), 5);
        assert_eq!(r.ref_words, 7);
        assert_eq!(round1(r.wer().unwrap()), 71.4);
        assert_eq!(round1(r.cer().unwrap()), 28.6);

        let r = UttResult::score(
            "u2",
            "y hasta mañana muy buenas noches",
            "esta mañana muy buenas noches",
        );
        assert_eq!(round1(wer(std::slice::from_ref(&r)).unwrap()), 33.3);
        assert_eq!(round1(cer(std::slice::from_ref(&r)).unwrap()), 12.5);

        let r = UttResult::score(
            "u3",
            "tu hermano y el mio se encontraron en el metro",
            "tu hermano y el vino se encontraron en el medio",
        );
        assert_eq!(round1(r.wer().unwrap()), 20.0);
        assert_eq!(round1(r.cer().unwrap()), 8.7);

        let s = "la pelicula que vimos era una comedia";
        let r = UttResult::score("u4", s, s);
        assert_eq!(r.wer(), Some(0.0));
        assert_eq!(r.cer(), Some(0.0));
    }

    #[test]
    fn corpus_rate_pools_counts() {
        let a = UttResult::score("a", "x", "y");
        let b = UttResult::score("b", "x x x", "x x x");
        // mean of per-utterance rates would be 50%, pooling gives 25%
        assert_eq!(wer(&[a, b]).unwrap(), 25.0);
    }

    #[test]
    fn insertions_can_push_wer_past_100() {
        let r = UttResult::score("a", "hola", "hola que tal estas");
        assert_eq!(wer(&[r]).unwrap(), 300.0);
    }

    #[test]
    fn empty_reference_corpus_is_an_error() {
        let r = UttResult::score("a", "", "algo");
        assert!(wer(&[r.clone()]).is_err());
        assert!(cer(&[r]).is_err());
        assert!(wer(&[]).is_err());
    }

    proptest! {
        #[test]
        fn swap_exchanges_deletions_and_insertions(
            a in proptest::collection::vec(0u8..4, 0..12),
            b in proptest::collection::vec(0u8..4, 0..12),
        ) {
            let ab = edit_distance(&a, &b);
            let ba = edit_distance(&b, &a);
            prop_assert_eq!(ab.substitutions, ba.substitutions);
            prop_assert_eq!(ab.deletions, ba.insertions);
            prop_assert_eq!(ab.insertions, ba.deletions);
        }

        #[test]
        fn self_alignment_is_free(s in "[a-c ]{0,30}") {
            let r = UttResult::score("x", &s, &s);
            prop_assert_eq!(r.word.errors(), 0);
            prop_assert_eq!(r.chars.errors(), 0);
        }
    }
}
