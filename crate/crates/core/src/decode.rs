//! Label-synchronous joint beam search: CTC prefix scores, attention-decoder scores and an
//! external language model combined by shallow fusion, plus an exhaustive oracle.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::ctc::{ctc_loss, CtcPosterior, PrefixScorer, PrefixState};
use crate::error::{Error, Result};
use crate::lm::SequenceScorer;
use crate::math::weighted;
use crate::nn::Model;
use crate::roi::RoiClip;
use crate::tokenizer::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    /// CTC weight; the attention decoder gets `1 − lambda`.
    pub lambda: f64,
    /// Language-model weight.
    pub beta: f64,
    pub beam: usize,
    /// Score added per emitted label (eos excluded).
    pub penalty: f64,
    pub max_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            beta: 0.4,
            beam: 10,
            penalty: 0.0,
            max_len: 200,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid(format!("λ = {} outside [0, 1]", self.lambda)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!("β = {} must be finite and ≥ 0", self.beta)));
        }
        if self.beam == 0 {
            return Err(Error::invalid("beam width must be at least 1"));
        }
        if self.max_len == 0 {
            return Err(Error::invalid("max_len must be at least 1"));
        }
        if !self.penalty.is_finite() {
            return Err(Error::invalid("insertion penalty must be finite"));
        }
        Ok(())
    }
}

/// `λ·s_ctc + (1−λ)·s_attn + β·s_lm + penalty·len`; zero weights silence `−∞` terms.
pub fn combine(s_ctc: f64, s_attn: f64, s_lm: f64, len: usize, cfg: &DecodeConfig) -> f64 {
    weighted(cfg.lambda, s_ctc)
        + weighted(1.0 - cfg.lambda, s_attn)
        + weighted(cfg.beta, s_lm)
        + cfg.penalty * len as f64
}

/// A finished hypothesis with its component scores (eos included in every component).
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub s_ctc: f64,
    pub s_attn: f64,
    pub s_lm: f64,
    pub combined: f64,
}

impl Hypothesis {
    pub fn recombined(&self, cfg: &DecodeConfig) -> f64 {
        combine(self.s_ctc, self.s_attn, self.s_lm, self.tokens.len(), cfg)
    }
}

/// The three score sources of a search over one utterance.
#[derive(Clone, Copy)]
pub struct Scorers<'a> {
    pub ctc: &'a CtcPosterior,
    pub attention: &'a dyn SequenceScorer,
    /// No LM scores every step as 0.
    pub lm: Option<&'a dyn SequenceScorer>,
    pub blank: usize,
    pub eos: usize,
}

impl Scorers<'_> {
    fn vocab_size(&self) -> usize {
        self.ctc.classes()
    }

    fn check(&self) -> Result<()> {
        if self.ctc.frames() == 0 {
            return Err(Error::invalid("cannot decode empty latents"));
        }
        let v = self.vocab_size();
        if self.blank >= v || self.eos >= v || self.blank == self.eos {
            return Err(Error::invalid("blank and eos must be distinct ids inside the vocabulary"));
        }
        Ok(())
    }

    fn labels(&self) -> Vec<usize> {
        (0..self.vocab_size()).filter(|&c| c != self.blank && c != self.eos).collect()
    }

    fn distribution(&self, scorer: &dyn SequenceScorer, prefix: &[usize], what: &str) -> Result<Vec<f64>> {
        let d = scorer.next_log_probs(prefix)?;
        if d.len() != self.vocab_size() {
            return Err(Error::invalid(format!(
                "{what} scorer returned {} scores for a vocabulary of {}",
                d.len(),
                self.vocab_size()
            )));
        }
        Ok(d)
    }

    fn lm_distribution(&self, prefix: &[usize]) -> Result<Option<Vec<f64>>> {
        self.lm.map(|lm| self.distribution(lm, prefix, "language model")).transpose()
    }
}

#[derive(Debug, Clone)]
struct Live {
    tokens: Vec<usize>,
    s_attn: f64,
    s_lm: f64,
    combined: f64,
    ctc_state: PrefixState,
}

/// Descending score, then ascending token sequence.
fn rank(a_score: f64, a_tokens: &[usize], b_score: f64, b_tokens: &[usize]) -> Ordering {
    b_score
        .partial_cmp(&a_score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a_tokens.cmp(b_tokens))
}

fn sort_hypotheses(h: &mut [Hypothesis]) {
    h.sort_by(|a, b| rank(a.combined, &a.tokens, b.combined, &b.tokens));
}

/// Beam search returning every ended hypothesis, best first.
///
/// Each step extends every live hypothesis by every label and by eos. Eos extensions end;
/// the best `beam` label extensions stay live. Hypotheses at `max_len` labels may only end.
/// With a non-positive penalty every score component can only fall as a prefix grows, so
/// the search stops as soon as the best ended score beats every live score.
pub fn beam_search(scorers: &Scorers, cfg: &DecodeConfig) -> Result<Vec<Hypothesis>> {
    cfg.validate()?;
    scorers.check()?;
    let prefix_scorer = PrefixScorer::new(scorers.ctc, scorers.blank);
    let labels = scorers.labels();
    let mut live = vec![Live {
        tokens: Vec::new(),
        s_attn: 0.0,
        s_lm: 0.0,
        combined: 0.0,
        ctc_state: prefix_scorer.initial(),
    }];
    let mut ended: Vec<Hypothesis> = Vec::new();
    while !live.is_empty() {
        let expansions = live
            .par_iter()
            .map(|h| -> Result<(Hypothesis, Vec<Live>)> {
                let attn = scorers.distribution(scorers.attention, &h.tokens, "attention")?;
                let lm = scorers.lm_distribution(&h.tokens)?;
                let lm_at = |c: usize| lm.as_ref().map_or(0.0, |d| d[c]);
                let (s_ctc, s_attn, s_lm) = (
                    prefix_scorer.full(&h.ctc_state),
                    h.s_attn + attn[scorers.eos],
                    h.s_lm + lm_at(scorers.eos),
                );
                let end = Hypothesis {
                    tokens: h.tokens.clone(),
                    s_ctc,
                    s_attn,
                    s_lm,
                    combined: combine(s_ctc, s_attn, s_lm, h.tokens.len(), cfg),
                };
                let mut grown = Vec::new();
                if h.tokens.len() < cfg.max_len {
                    for &c in &labels {
                        let (psi, state) = prefix_scorer.extend(&h.ctc_state, c);
                        let mut tokens = h.tokens.clone();
                        tokens.push(c);
                        let (s_attn, s_lm) = (h.s_attn + attn[c], h.s_lm + lm_at(c));
                        grown.push(Live {
                            combined: combine(psi, s_attn, s_lm, tokens.len(), cfg),
                            tokens,
                            s_attn,
                            s_lm,
                            ctc_state: state,
                        });
                    }
                }
                Ok((end, grown))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut next = Vec::new();
        for (end, grown) in expansions {
            ended.push(end);
            next.extend(grown);
        }
        next.sort_by(|a, b| rank(a.combined, &a.tokens, b.combined, &b.tokens));
        next.truncate(cfg.beam);
        live = next;
        if cfg.penalty <= 0.0 {
            let best_ended = ended.iter().map(|h| h.combined).fold(f64::NEG_INFINITY, f64::max);
            let best_live = live.iter().map(|h| h.combined).fold(f64::NEG_INFINITY, f64::max);
            if !live.is_empty() && best_ended > best_live {
                break;
            }
        }
    }
    sort_hypotheses(&mut ended);
    Ok(ended)
}

/// Largest search space [`exhaustive_decode`] agrees to enumerate.
pub const EXHAUSTIVE_LIMIT: usize = 100_000;

/// Scores every label sequence of length ≤ `max_len` (eos-terminated) and returns the best.
/// The CTC term comes from the forward-backward loss, independently of the prefix scorer.
pub fn exhaustive_decode(scorers: &Scorers, cfg: &DecodeConfig) -> Result<Hypothesis> {
    cfg.validate()?;
    scorers.check()?;
    let labels = scorers.labels();
    let mut total = 0usize;
    let mut layer = 1usize;
    for _ in 0..=cfg.max_len {
        total = total.saturating_add(layer);
        layer = layer.saturating_mul(labels.len());
    }
    if total > EXHAUSTIVE_LIMIT {
        return Err(Error::invalid(format!(
            "exhaustive search over {total} sequences exceeds the limit of {EXHAUSTIVE_LIMIT}"
        )));
    }
    let mut sequences: Vec<Vec<usize>> = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..cfg.max_len {
        frontier = frontier
            .iter()
            .flat_map(|p: &Vec<usize>| {
                labels.iter().map(move |&c| {
                    let mut q = p.clone();
                    q.push(c);
                    q
                })
            })
            .collect();
        sequences.extend(frontier.iter().cloned());
    }
    let mut scored = sequences
        .par_iter()
        .map(|seq| -> Result<Hypothesis> {
            let s_ctc = -ctc_loss(scorers.ctc, seq, scorers.blank)?.nll;
            let mut s_attn = 0.0;
            let mut s_lm = 0.0;
            for k in 0..=seq.len() {
                let next = seq.get(k).copied().unwrap_or(scorers.eos);
                s_attn += scorers.distribution(scorers.attention, &seq[..k], "attention")?[next];
                if let Some(d) = scorers.lm_distribution(&seq[..k])? {
                    s_lm += d[next];
                }
            }
            Ok(Hypothesis {
                tokens: seq.clone(),
                s_ctc,
                s_attn,
                s_lm,
                combined: combine(s_ctc, s_attn, s_lm, seq.len(), cfg),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    sort_hypotheses(&mut scored);
    Ok(scored.swap_remove(0))
}

/// Encodes a normalized clip and runs the joint search with `model` as attention scorer.
pub fn decode_clip(
    model: &Model,
    clip: &RoiClip,
    lm: Option<&dyn SequenceScorer>,
    cfg: &DecodeConfig,
) -> Result<Vec<Hypothesis>> {
    let enc = model.encode(clip)?;
    let attention = model.attention_scorer(&enc.latents);
    let scorers = Scorers {
        ctc: &enc.ctc,
        attention: &attention,
        lm,
        blank: model.cfg.blank_id(),
        eos: model.cfg.eos_id(),
    };
    let cfg = DecodeConfig {
        max_len: cfg.max_len.min(clip.frames),
        ..*cfg
    };
    beam_search(&scorers, &cfg)
}

pub const NBEST_HEADER: &str = "utterance_id\trank\tcombined\ts_ctc\ts_attn\ts_lm\ttext";

/// N-best rows (`rank` from 1); scores print with full round-trip precision.
pub fn nbest_rows(id: &str, hyps: &[Hypothesis], vocab: &Vocabulary) -> Result<String> {
    let mut out = String::new();
    for (r, h) in hyps.iter().enumerate() {
        writeln!(
            out,
            "{id}\t{}\t{}\t{}\t{}\t{}\t{}",
            r + 1,
            h.combined,
            h.s_ctc,
            h.s_attn,
            h.s_lm,
            vocab.decode(&h.tokens)?
        )
        .unwrap();
    }
    Ok(out)
}

/// One parsed n-best row.
#[derive(Debug, Clone, PartialEq)]
pub struct NbestRow {
    pub id: String,
    pub rank: usize,
    pub combined: f64,
    pub s_ctc: f64,
    pub s_attn: f64,
    pub s_lm: f64,
    pub text: String,
}

pub fn parse_nbest(text: &str) -> std::result::Result<Vec<NbestRow>, String> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() || line.starts_with('#') || line == NBEST_HEADER {
            continue;
        }
        let f: Vec<&str> = line.splitn(7, '\t').collect();
        if f.len() != 7 {
            return Err(format!("line {}: expected 7 fields", n + 1));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| format!("line {}: bad score {s:?}", n + 1));
        rows.push(NbestRow {
            id: f[0].to_string(),
            rank: f[1].parse().map_err(|_| format!("line {}: bad rank", n + 1))?,
            combined: num(f[2])?,
            s_ctc: num(f[3])?,
            s_attn: num(f[4])?,
            s_lm: num(f[5])?,
            text: f[6].to_string(),
        });
    }
    Ok(rows)
}
