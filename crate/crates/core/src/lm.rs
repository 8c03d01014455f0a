//! Character n-gram language model with add-k smoothing, exposed through the same
//! incremental scoring contract the joint decoder uses for every scorer.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tokenizer::Vocabulary;

/// Sentence-start padded history of at most `order - 1` ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LmState(Vec<usize>);

impl LmState {
    pub fn history(&self) -> &[usize] {
        &self.0
    }
}

/// Anything that assigns next-token log-probabilities to a label prefix.
pub trait SequenceScorer: Sync {
    /// Log-probabilities over the whole vocabulary for the token following `prefix`.
    fn next_log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharNgramLm {
    order: usize,
    k: f64,
    vocab_size: usize,
    eos_id: usize,
    vocab_hash: String,
    /// context → log p(token | context), for contexts seen in training
    table: HashMap<Vec<usize>, Vec<f64>>,
}

impl CharNgramLm {
    /// Counts start-padded, eos-terminated n-grams over `corpus` (already encoded) and applies
    /// add-k smoothing. The start pad is the eos id.
    pub fn train(
        corpus: &[Vec<usize>],
        order: usize,
        k: f64,
        vocab: &Vocabulary,
    ) -> Result<Self> {
        Self::train_with(corpus, order, k, vocab.len(), vocab.eos_id(), vocab.hash())
    }

    pub fn train_with(
        corpus: &[Vec<usize>],
        order: usize,
        k: f64,
        vocab_size: usize,
        eos_id: usize,
        vocab_hash: String,
    ) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::invalid("language model corpus is empty"));
        }
        if order == 0 {
            return Err(Error::invalid("n-gram order must be at least 1"));
        }
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::invalid("smoothing constant k must be positive"));
        }
        let mut counts: HashMap<Vec<usize>, Vec<u64>> = HashMap::new();
        for line in corpus {
            if let Some(&bad) = line.iter().find(|&&id| id >= vocab_size) {
                return Err(Error::InvalidToken {
                    id: bad,
                    size: vocab_size,
                });
            }
            let mut padded = vec![eos_id; order - 1];
            padded.extend_from_slice(line);
            padded.push(eos_id);
            for window in padded.windows(order) {
                let (ctx, tok) = window.split_at(order - 1);
                counts
                    .entry(ctx.to_vec())
                    .or_insert_with(|| vec![0; vocab_size])[tok[0]] += 1;
            }
        }
        let table = counts
            .into_iter()
            .map(|(ctx, c)| {
                let total: u64 = c.iter().sum();
                let denom = (total as f64 + vocab_size as f64 * k).ln();
                let lp = c.iter().map(|&n| (n as f64 + k).ln() - denom).collect();
                (ctx, lp)
            })
            .collect();
        Ok(Self {
            order,
            k,
            vocab_size,
            eos_id,
            vocab_hash,
            table,
        })
    }

    /// A model with no observations: every context is uniform.
    pub fn uniform(order: usize, vocab: &Vocabulary) -> Self {
        Self {
            order: order.max(1),
            k: 1.0,
            vocab_size: vocab.len(),
            eos_id: vocab.eos_id(),
            vocab_hash: vocab.hash(),
            table: HashMap::new(),
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> f64 {
        self.k
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    pub fn initial_state(&self) -> LmState {
        LmState(vec![self.eos_id; self.order - 1])
    }

    /// The state reached after consuming `prefix` from the sentence start.
    pub fn state_for(&self, prefix: &[usize]) -> LmState {
        let keep = self.order - 1;
        let mut hist = vec![self.eos_id; keep];
        hist.extend_from_slice(prefix);
        LmState(hist[hist.len() - keep..].to_vec())
    }

    fn uniform_log_prob(&self) -> f64 {
        -(self.vocab_size as f64).ln()
    }

    /// Full next-token distribution for a state.
    pub fn distribution(&self, state: &LmState) -> Vec<f64> {
        match self.table.get(&state.0) {
            Some(lp) => lp.clone(),
            None => vec![self.uniform_log_prob(); self.vocab_size],
        }
    }

    /// log p(token | state) and the state after `token`.
    pub fn score_step(&self, state: &LmState, token: usize) -> Result<(f64, LmState)> {
        if token >= self.vocab_size {
            return Err(Error::InvalidToken {
                id: token,
                size: self.vocab_size,
            });
        }
        let lp = match self.table.get(&state.0) {
            Some(row) => row[token],
            None => self.uniform_log_prob(),
        };
        let mut next = state.0.clone();
        if self.order > 1 {
            next.remove(0);
            next.push(token);
        }
        Ok((lp, LmState(next)))
    }

    /// Log-probability of a whole eos-terminated sentence.
    pub fn sentence_log_prob(&self, ids: &[usize]) -> Result<f64> {
        let mut state = self.initial_state();
        let mut total = 0.0;
        for &tok in ids.iter().chain(std::iter::once(&self.eos_id)) {
            let (lp, next) = self.score_step(&state, tok)?;
            total += lp;
            state = next;
        }
        Ok(total)
    }

    /// exp of the negative mean per-token log-probability, eos included.
    pub fn perplexity(&self, lines: &[Vec<usize>]) -> Result<f64> {
        if lines.is_empty() {
            return Err(Error::invalid("perplexity needs at least one line"));
        }
        let mut total = 0.0;
        let mut tokens = 0usize;
        for line in lines {
            total += self.sentence_log_prob(line)?;
            tokens += line.len() + 1;
        }
        Ok((-total / tokens as f64).exp())
    }

    /// Serializes as the `LPLM` text format.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "LPLM {} {} {}\n",
            self.order, self.k, self.vocab_hash
        );
        let mut contexts: Vec<_> = self.table.iter().collect();
        contexts.sort_by(|a, b| a.0.cmp(b.0));
        for (ctx, lp) in contexts {
            let ctx: Vec<String> = ctx.iter().map(usize::to_string).collect();
            out.push_str(&ctx.join(" "));
            out.push('\t');
            for (i, v) in lp.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                write!(out, "{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, vocab: &Vocabulary) -> Result<Self> {
        let bad = |m: String| Error::invalid(format!("language model file: {m}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "LPLM" {
            return Err(bad(format!("bad header {header:?}")));
        }
        let order: usize = fields[1].parse().map_err(|_| bad("bad order".into()))?;
        let k: f64 = fields[2].parse().map_err(|_| bad("bad smoothing".into()))?;
        let vocab_hash = fields[3].to_string();
        if vocab_hash != vocab.hash() {
            return Err(Error::VocabMismatch {
                what: "language model".into(),
                expected: vocab.hash(),
                found: vocab_hash,
            });
        }
        if order == 0 {
            return Err(bad("order 0".into()));
        }
        let vocab_size = vocab.len();
        let mut table = HashMap::new();
        for (n, line) in lines.enumerate() {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (ctx, values) = line
                .split_once('\t')
                .ok_or_else(|| bad(format!("line {} has no tab", n + 2)))?;
            let ctx: Vec<usize> = ctx
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(format!("line {}: bad context", n + 2)))?;
            if ctx.len() != order - 1 {
                return Err(bad(format!("line {}: context length {}", n + 2, ctx.len())));
            }
            let lp: Vec<f64> = values
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(format!("line {}: bad log-probability", n + 2)))?;
            if lp.len() != vocab_size {
                return Err(bad(format!("line {}: {} log-probabilities", n + 2, lp.len())));
            }
            table.insert(ctx, lp);
        }
        Ok(Self {
            order,
            k,
            vocab_size,
            eos_id: vocab.eos_id(),
            vocab_hash,
            table,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, vocab: &Vocabulary) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, vocab).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::format(path, m),
            other => other,
        })
    }
}

impl SequenceScorer for CharNgramLm {
    fn next_log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        Ok(self.distribution(&self.state_for(prefix)))
    }
}
