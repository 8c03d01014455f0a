//! Connectionist temporal classification: the collapse mapping, the exact loss and its
//! gradient by forward-backward, greedy decoding, and label-synchronous prefix scoring.
//!
//! All recursions run in log space.

use crate::error::{Error, Result};
use crate::math::{log_add, log_softmax_rows};

const NEG_INF: f64 = f64::NEG_INFINITY;

/// Frame-level log-posteriors, `frames × classes`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CtcPosterior {
    frames: usize,
    classes: usize,
    logprobs: Vec<f64>,
}

impl CtcPosterior {
    /// Wraps row-wise log-softmax output. Every row must exponentiate to 1 within 1e-9.
    pub fn from_log_probs(frames: usize, classes: usize, logprobs: Vec<f64>) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid("a CTC posterior needs blank plus at least one label"));
        }
        if logprobs.len() != frames * classes {
            return Err(Error::invalid(format!(
                "posterior buffer has {} values, expected {frames}×{classes}",
                logprobs.len()
            )));
        }
        for (t, row) in logprobs.chunks(classes).enumerate() {
            if row.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
                return Err(Error::Numerical(format!("posterior frame {t} is not finite")));
            }
            let total: f64 = row.iter().map(|x| x.exp()).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "posterior frame {t} sums to {total}, not 1"
                )));
            }
        }
        Ok(Self {
            frames,
            classes,
            logprobs,
        })
    }

    pub fn from_logits(frames: usize, classes: usize, logits: &[f64]) -> Result<Self> {
        if logits.len() != frames * classes {
            return Err(Error::invalid("logit buffer does not match its shape"));
        }
        Self::from_log_probs(frames, classes, log_softmax_rows(logits, classes))
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn at(&self, t: usize, k: usize) -> f64 {
        self.logprobs[t * self.classes + k]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.logprobs[t * self.classes..(t + 1) * self.classes]
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.logprobs
    }
}

/// The CTC many-to-one map: merge repeats, then drop blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != blank {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

/// Minimum number of frames needed to emit `target`: one per label plus a separating blank
/// between each pair of equal neighbours.
pub fn required_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check_labels(target: &[usize], classes: usize, blank: usize) -> Result<()> {
    for &k in target {
        if k == blank {
            return Err(Error::BlankInLabels(k));
        }
        if k >= classes {
            return Err(Error::InvalidToken { id: k, size: classes });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtcLoss {
    /// −log p(target | posterior); `+inf` when the target cannot be emitted in time.
    pub nll: f64,
    /// ∂nll/∂logprobs, `frames × classes`. All zero for unreachable targets.
    pub grad: Vec<f64>,
}

impl CtcLoss {
    pub fn is_reachable(&self) -> bool {
        self.nll.is_finite()
    }
}

/// Exact CTC negative log-likelihood with its gradient w.r.t. the log-posteriors.
pub fn ctc_loss(post: &CtcPosterior, target: &[usize], blank: usize) -> Result<CtcLoss> {
    check_labels(target, post.classes, blank)?;
    let t_len = post.frames;
    let v = post.classes;
    if t_len == 0 || required_frames(target) > t_len {
        return Ok(CtcLoss {
            nll: f64::INFINITY,
            grad: vec![0.0; t_len * v],
        });
    }

    // Extended label sequence: blank, y1, blank, y2, ..., yL, blank.
    let s_len = 2 * target.len() + 1;
    let label = |s: usize| if s % 2 == 0 { blank } else { target[s / 2] };
    let can_skip = |s: usize| s >= 2 && s % 2 == 1 && label(s) != label(s - 2);

    let mut alpha = vec![NEG_INF; t_len * s_len];
    alpha[0] = post.at(0, blank);
    if s_len > 1 {
        alpha[1] = post.at(0, label(1));
    }
    for t in 1..t_len {
        let (prev, cur) = alpha.split_at_mut(t * s_len);
        let prev = &prev[(t - 1) * s_len..];
        for s in 0..s_len {
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if can_skip(s) {
                acc = log_add(acc, prev[s - 2]);
            }
            cur[s] = if acc == NEG_INF {
                NEG_INF
            } else {
                acc + post.at(t, label(s))
            };
        }
    }

    let mut beta = vec![NEG_INF; t_len * s_len];
    let last = (t_len - 1) * s_len;
    beta[last + s_len - 1] = post.at(t_len - 1, blank);
    if s_len > 1 {
        beta[last + s_len - 2] = post.at(t_len - 1, label(s_len - 2));
    }
    for t in (0..t_len - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * s_len);
        let cur = &mut cur[t * s_len..];
        for s in 0..s_len {
            let mut acc = next[s];
            if s + 1 < s_len {
                acc = log_add(acc, next[s + 1]);
            }
            if s + 2 < s_len && can_skip(s + 2) {
                acc = log_add(acc, next[s + 2]);
            }
            cur[s] = if acc == NEG_INF {
                NEG_INF
            } else {
                acc + post.at(t, label(s))
            };
        }
    }

    let mut log_p = alpha[last + s_len - 1];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[last + s_len - 2]);
    }
    if log_p == NEG_INF {
        return Ok(CtcLoss {
            nll: f64::INFINITY,
            grad: vec![0.0; t_len * v],
        });
    }

    // ∂log p/∂lp_t(k) = Σ_{s: label(s)=k} α_t(s) β_t(s) / (y_t(k) p), since both α and β
    // include the emission at t.
    let mut grad = vec![0.0; t_len * v];
    for t in 0..t_len {
        for s in 0..s_len {
            let ab = alpha[t * s_len + s] + beta[t * s_len + s];
            if ab == NEG_INF {
                continue;
            }
            let k = label(s);
            grad[t * v + k] -= (ab - post.at(t, k) - log_p).exp();
        }
    }
    Ok(CtcLoss { nll: -log_p, grad })
}

/// Chains a gradient w.r.t. log-softmax outputs back to the logits.
pub fn log_softmax_backward(logprobs: &[f64], grad_lp: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(grad_lp.len());
    for (lp, g) in logprobs.chunks(classes).zip(grad_lp.chunks(classes)) {
        let total: f64 = g.iter().sum();
        out.extend(lp.iter().zip(g).map(|(l, gi)| gi - l.exp() * total));
    }
    out
}

/// Per-frame argmax (ties to the lowest id) followed by [`collapse`].
pub fn ctc_greedy(post: &CtcPosterior, blank: usize) -> Vec<usize> {
    let path: Vec<usize> = (0..post.frames)
        .map(|t| {
            let row = post.row(t);
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect();
    collapse(&path, blank)
}

/// Forward variables of a label prefix: log-probability of having emitted exactly the prefix
/// by frame t, split by whether frame t was a label or a blank.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixState {
    nonblank: Vec<f64>,
    blank: Vec<f64>,
    len: usize,
    last: Option<usize>,
}

impl PrefixState {
    pub fn nonblank(&self) -> &[f64] {
        &self.nonblank
    }

    pub fn blank(&self) -> &[f64] {
        &self.blank
    }

    pub fn prefix_len(&self) -> usize {
        self.len
    }
}

/// Label-synchronous CTC prefix scores over a fixed posterior (full frame horizon).
#[derive(Debug, Clone, Copy)]
pub struct PrefixScorer<'a> {
    post: &'a CtcPosterior,
    blank: usize,
}

/// What a prefix extension asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extension {
    /// Append a label and score the probability that the emission starts with the result.
    Label(usize),
    /// Terminate: probability that the emission equals the prefix exactly.
    End,
}

impl<'a> PrefixScorer<'a> {
    pub fn new(post: &'a CtcPosterior, blank: usize) -> Self {
        Self { post, blank }
    }

    /// State of the empty prefix: cumulative blank log-probabilities.
    pub fn initial(&self) -> PrefixState {
        let t_len = self.post.frames;
        let mut blank = Vec::with_capacity(t_len);
        let mut acc = 0.0;
        for t in 0..t_len {
            acc += self.post.at(t, self.blank);
            blank.push(acc);
        }
        PrefixState {
            nonblank: vec![NEG_INF; t_len],
            blank,
            len: 0,
            last: None,
        }
    }

    /// log p(emission == prefix).
    pub fn full(&self, state: &PrefixState) -> f64 {
        match self.post.frames {
            0 => {
                if state.len == 0 {
                    0.0
                } else {
                    NEG_INF
                }
            }
            t_len => log_add(state.nonblank[t_len - 1], state.blank[t_len - 1]),
        }
    }

    /// Extends `state` by label `c`; returns log p(emission starts with prefix·c) and the new
    /// state.
    pub fn extend(&self, state: &PrefixState, c: usize) -> (f64, PrefixState) {
        let t_len = self.post.frames;
        let mut nonblank = vec![NEG_INF; t_len];
        let mut blank = vec![NEG_INF; t_len];
        if t_len == 0 {
            let next = PrefixState {
                nonblank,
                blank,
                len: state.len + 1,
                last: Some(c),
            };
            return (NEG_INF, next);
        }
        // Probability mass that may transition into c right after frame t-1.
        let phi = |t: usize| -> f64 {
            if Some(c) == state.last {
                state.blank[t]
            } else {
                log_add(state.blank[t], state.nonblank[t])
            }
        };
        let mut score = if state.len == 0 {
            self.post.at(0, c)
        } else {
            NEG_INF
        };
        nonblank[0] = score;
        for t in 1..t_len {
            let p = phi(t - 1);
            let emit = self.post.at(t, c);
            nonblank[t] = log_add(nonblank[t - 1], p) + emit;
            blank[t] = log_add(blank[t - 1], nonblank[t - 1]) + self.post.at(t, self.blank);
            score = log_add(score, p + emit);
        }
        let next = PrefixState {
            nonblank,
            blank,
            len: state.len + 1,
            last: Some(c),
        };
        (score, next)
    }

    /// Scores a set of extensions of `prefix`, whose forward variables are `state`.
    /// `End` yields the full-sequence probability and no new state.
    pub fn step(
        &self,
        state: &PrefixState,
        prefix: &[usize],
        candidates: &[Extension],
    ) -> Result<Vec<(f64, Option<PrefixState>)>> {
        if prefix.len() != state.len || prefix.last().copied() != state.last {
            return Err(Error::invalid(format!(
                "prefix state covers {} labels but the prefix has {}",
                state.len,
                prefix.len()
            )));
        }
        candidates
            .iter()
            .map(|ext| match *ext {
                Extension::End => Ok((self.full(state), None)),
                Extension::Label(c) => {
                    if c == self.blank {
                        return Err(Error::BlankInLabels(c));
                    }
                    if c >= self.post.classes {
                        return Err(Error::InvalidToken {
                            id: c,
                            size: self.post.classes,
                        });
                    }
                    let (s, next) = self.extend(state, c);
                    Ok((s, Some(next)))
                }
            })
            .collect()
    }

    /// Runs the prefix recursion over a whole label sequence.
    pub fn state_for(&self, prefix: &[usize]) -> PrefixState {
        prefix
            .iter()
            .fold(self.initial(), |st, &c| self.extend(&st, c).1)
    }
}
