//! Hybrid CTC/attention encoder-decoder: a 3D-convolution visual frontend, Conformer-style
//! encoder layers, a linear CTC head and a Transformer-style attention decoder.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ctc::CtcPosterior;
use crate::error::{Error, Result};
use crate::lm::SequenceScorer;
use crate::math::weighted;
use crate::roi::RoiClip;

use super::graph::{Graph, Matrix, Var, ZERO_INDEX};
use super::params::{read_checkpoint, write_checkpoint, ParamStore, Record};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Temporal receptive field of the 3D frontend convolution.
    pub frontend_kernel_t: usize,
    /// Spatial kernel of the 3D frontend convolution.
    pub frontend_kernel_s: usize,
    /// Spatial stride of the 3D frontend convolution.
    pub frontend_stride: usize,
    pub frontend_channels: usize,
    pub spatial_channels: usize,
    /// Depthwise kernel of the encoder convolution module.
    pub conv_module_kernel: usize,
    pub vocab_size: usize,
    /// Learned per-head clipped relative-distance attention bias instead of absolute
    /// sinusoidal positions in the encoder.
    pub relative_positions: bool,
    pub max_relative_distance: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            encoder_layers: 2,
            decoder_layers: 2,
            heads: 2,
            ffn_dim: 128,
            frontend_kernel_t: 5,
            frontend_kernel_s: 7,
            frontend_stride: 4,
            frontend_channels: 8,
            spatial_channels: 16,
            conv_module_kernel: 5,
            vocab_size: crate::tokenizer::VOCAB_SIZE,
            relative_positions: false,
            max_relative_distance: 16,
        }
    }
}

impl ModelConfig {
    /// Default topology at feature width `d` (feed-forward width 4d).
    pub fn with_width(d: usize) -> Self {
        Self {
            d_model: d,
            ffn_dim: 4 * d,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.d_model,
            self.heads,
            self.ffn_dim,
            self.frontend_kernel_t,
            self.frontend_kernel_s,
            self.frontend_stride,
            self.frontend_channels,
            self.spatial_channels,
            self.conv_module_kernel,
        ];
        if positive.contains(&0) {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::invalid(format!(
                "{} heads do not divide d_model {}",
                self.heads, self.d_model
            )));
        }
        for (name, k) in [
            ("frontend temporal kernel", self.frontend_kernel_t),
            ("frontend spatial kernel", self.frontend_kernel_s),
            ("convolution module kernel", self.conv_module_kernel),
        ] {
            if k % 2 == 0 {
                return Err(Error::invalid(format!("{name} must be odd, got {k}")));
            }
        }
        if self.vocab_size < 3 {
            return Err(Error::invalid("vocabulary needs blank, eos and at least one label"));
        }
        Ok(())
    }

    pub fn blank_id(&self) -> usize {
        0
    }

    pub fn eos_id(&self) -> usize {
        self.vocab_size - 1
    }

    fn to_meta(&self) -> Vec<f32> {
        [
            self.d_model,
            self.encoder_layers,
            self.decoder_layers,
            self.heads,
            self.ffn_dim,
            self.frontend_kernel_t,
            self.frontend_kernel_s,
            self.frontend_stride,
            self.frontend_channels,
            self.spatial_channels,
            self.conv_module_kernel,
            self.vocab_size,
            self.relative_positions as usize,
            self.max_relative_distance,
        ]
        .iter()
        .map(|&v| v as f32)
        .collect()
    }

    fn from_meta(v: &[f32]) -> std::result::Result<Self, String> {
        if v.len() != 14 || v.iter().any(|x| *x < 0.0 || x.fract() != 0.0) {
            return Err("malformed model configuration record".into());
        }
        let u = |i: usize| v[i] as usize;
        let cfg = Self {
            d_model: u(0),
            encoder_layers: u(1),
            decoder_layers: u(2),
            heads: u(3),
            ffn_dim: u(4),
            frontend_kernel_t: u(5),
            frontend_kernel_s: u(6),
            frontend_stride: u(7),
            frontend_channels: u(8),
            spatial_channels: u(9),
            conv_module_kernel: u(10),
            vocab_size: u(11),
            relative_positions: u(12) != 0,
            max_relative_distance: u(13),
        };
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    /// Spatial size after the strided frontend convolutions.
    pub fn frontend_output_size(&self, input: usize) -> (usize, usize) {
        let pad = self.frontend_kernel_s / 2;
        let s1 = (input + 2 * pad - self.frontend_kernel_s) / self.frontend_stride + 1;
        let s2 = (s1 - 1) / 2 + 1;
        (s1, s2)
    }
}

/// Sinusoidal absolute positions, `rows × d`.
pub fn positional_encoding(rows: usize, d: usize) -> Matrix {
    Matrix::from_fn(rows, d, |t, c| {
        let i = (c / 2) as f64;
        let angle = t as f64 / 10000f64.powf(2.0 * i / d as f64);
        if c % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Loss components of one training example.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub loss: Var,
    /// −log p_ctc(y|x); +∞ when the target cannot be aligned.
    pub ctc_nll: f64,
    /// −log p_attn(y|x), eos included.
    pub attn_nll: f64,
}

/// Negated weighted log-likelihood `−(α·ctc + (1−α)·attn)`; a zero weight silences its term.
pub fn hybrid_loss(ctc_loglik: f64, attn_loglik: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("α = {alpha} outside [0, 1]")));
    }
    Ok(-(weighted(alpha, ctc_loglik) + weighted(1.0 - alpha, attn_loglik)))
}

/// Encoder latents and CTC posteriors of one clip.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub latents: Matrix,
    pub ctc: CtcPosterior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    fn uniform(&mut self, name: String, rows: usize, cols: usize, bound: f64) {
        let data = (0..rows * cols).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.store.insert(name, Matrix::new(rows, cols, data));
    }

    fn constant(&mut self, name: String, rows: usize, cols: usize, v: f64) {
        self.store.insert(name, Matrix::new(rows, cols, vec![v; rows * cols]));
    }

    fn linear(&mut self, p: &str, fan_in: usize, fan_out: usize) {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.uniform(format!("{p}.w"), fan_in, fan_out, bound);
        self.constant(format!("{p}.b"), 1, fan_out, 0.0);
    }

    fn norm(&mut self, p: &str, d: usize) {
        self.constant(format!("{p}.g"), 1, d, 1.0);
        self.constant(format!("{p}.b"), 1, d, 0.0);
    }

    fn ffn(&mut self, p: &str, d: usize, hidden: usize) {
        self.norm(&format!("{p}.ln"), d);
        self.linear(&format!("{p}.w1"), d, hidden);
        self.linear(&format!("{p}.w2"), hidden, d);
    }

    fn attention(&mut self, p: &str, d: usize) {
        self.norm(&format!("{p}.ln"), d);
        for proj in ["q", "k", "v", "o"] {
            self.linear(&format!("{p}.{proj}"), d, d);
        }
    }
}

impl Model {
    /// Randomly initialized model; Xavier-uniform weights, zero biases, unit norms.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::default();
        let mut init = Init {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let (d, v) = (cfg.d_model, cfg.vocab_size);
        let taps = cfg.frontend_kernel_t * cfg.frontend_kernel_s * cfg.frontend_kernel_s;
        init.linear("frontend.conv3d", taps, cfg.frontend_channels);
        init.linear("frontend.conv2d", 9 * cfg.frontend_channels, cfg.spatial_channels);
        init.linear("frontend.proj", cfg.spatial_channels, d);
        for l in 0..cfg.encoder_layers {
            let p = format!("enc.{l}");
            init.ffn(&format!("{p}.ffn1"), d, cfg.ffn_dim);
            init.attention(&format!("{p}.mhsa"), d);
            if cfg.relative_positions {
                let width = 2 * cfg.max_relative_distance + 1;
                init.constant(format!("{p}.mhsa.rel"), cfg.heads, width, 0.0);
            }
            init.norm(&format!("{p}.conv.ln"), d);
            init.linear(&format!("{p}.conv.pw1"), d, 2 * d);
            let k = cfg.conv_module_kernel;
            init.uniform(format!("{p}.conv.dw.w"), k, d, (3.0 / k as f64).sqrt());
            init.constant(format!("{p}.conv.dw.b"), 1, d, 0.0);
            init.linear(&format!("{p}.conv.pw2"), d, d);
            init.ffn(&format!("{p}.ffn2"), d, cfg.ffn_dim);
        }
        init.linear("ctc", d, v);
        init.uniform("dec.embed".into(), v, d, (6.0 / (v + d) as f64).sqrt());
        for l in 0..cfg.decoder_layers {
            let p = format!("dec.{l}");
            init.attention(&format!("{p}.self"), d);
            init.attention(&format!("{p}.cross"), d);
            init.ffn(&format!("{p}.ffn"), d, cfg.ffn_dim);
        }
        init.norm("dec.ln", d);
        init.linear("dec.out", d, v);
        Ok(Self { cfg, params: store })
    }

    fn p(&self, g: &mut Graph, name: &str) -> Var {
        g.param(&self.params, name)
    }

    fn linear(&self, g: &mut Graph, x: Var, p: &str) -> Var {
        let w = self.p(g, &format!("{p}.w"));
        let b = self.p(g, &format!("{p}.b"));
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }

    fn norm(&self, g: &mut Graph, x: Var, p: &str) -> Var {
        let gamma = self.p(g, &format!("{p}.g"));
        let beta = self.p(g, &format!("{p}.b"));
        g.layer_norm(x, gamma, beta)
    }

    fn ffn(&self, g: &mut Graph, x: Var, p: &str) -> Var {
        let h = self.norm(g, x, &format!("{p}.ln"));
        let h = self.linear(g, h, &format!("{p}.w1"));
        let h = g.swish(h);
        self.linear(g, h, &format!("{p}.w2"))
    }

    /// Pre-normalized multi-head attention of `x` over itself, or over `memory` when given.
    fn attention(
        &self,
        g: &mut Graph,
        p: &str,
        x: Var,
        memory: Option<Var>,
        mask: Option<Var>,
        relative: bool,
    ) -> Var {
        let h_in = self.norm(g, x, &format!("{p}.ln"));
        let kv_in = memory.unwrap_or(h_in);
        let q = self.linear(g, h_in, &format!("{p}.q"));
        let k = self.linear(g, kv_in, &format!("{p}.k"));
        let v = self.linear(g, kv_in, &format!("{p}.v"));
        let (tq, tk) = (g.value(q).rows, g.value(k).rows);
        let heads = self.cfg.heads;
        let dh = self.cfg.d_model / heads;
        let rel = relative.then(|| self.p(g, &format!("{p}.rel")));
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = g.slice_cols(q, h * dh, dh);
            let kh = g.slice_cols(k, h * dh, dh);
            let vh = g.slice_cols(v, h * dh, dh);
            let s = g.matmul_t(qh, kh);
            let mut s = g.scale(s, 1.0 / (dh as f64).sqrt());
            if let Some(rel) = rel {
                let kmax = self.cfg.max_relative_distance as i64;
                let width = (2 * kmax + 1) as usize;
                let index = (0..tq * tk)
                    .map(|n| {
                        let (i, j) = ((n / tk) as i64, (n % tk) as i64);
                        h * width + ((j - i).clamp(-kmax, kmax) + kmax) as usize
                    })
                    .collect();
                let bias = g.gather(rel, index, tq, tk);
                s = g.add(s, bias);
            }
            if let Some(m) = mask {
                s = g.add(s, m);
            }
            let a = g.softmax(s);
            outs.push(g.matmul(a, vh));
        }
        let o = g.concat_cols(&outs);
        self.linear(g, o, &format!("{p}.o"))
    }

    /// Frontend features (`T × d`, positions included unless relative attention is on).
    pub fn frontend(&self, g: &mut Graph, clip: &RoiClip) -> Result<Var> {
        if clip.frames == 0 || clip.height == 0 || clip.width == 0 {
            return Err(Error::invalid("frontend needs a non-empty clip"));
        }
        if !clip.is_finite() {
            return Err(Error::Numerical("non-finite input clip".into()));
        }
        let cfg = &self.cfg;
        let (t_len, h, w) = (clip.frames, clip.height, clip.width);
        let (kt, ks, stride) = (cfg.frontend_kernel_t, cfg.frontend_kernel_s, cfg.frontend_stride);
        let pad = ks / 2;
        let (h1, _) = cfg.frontend_output_size(h);
        let (w1, _) = cfg.frontend_output_size(w);
        let taps = kt * ks * ks;
        let mut cols = vec![0.0; t_len * h1 * w1 * taps];
        for t in 0..t_len {
            for dt in 0..kt {
                let Some(st) = (t + dt).checked_sub(kt / 2).filter(|&s| s < t_len) else {
                    continue;
                };
                let frame = clip.frame(st);
                for oy in 0..h1 {
                    for ox in 0..w1 {
                        let row = ((t * h1 + oy) * w1 + ox) * taps + dt * ks * ks;
                        for ky in 0..ks {
                            let Some(sy) = (oy * stride + ky).checked_sub(pad).filter(|&s| s < h) else {
                                continue;
                            };
                            for kx in 0..ks {
                                if let Some(sx) = (ox * stride + kx).checked_sub(pad).filter(|&s| s < w) {
                                    cols[row + ky * ks + kx] = frame[sy * w + sx];
                                }
                            }
                        }
                    }
                }
            }
        }
        let x = g.leaf(Matrix::new(t_len * h1 * w1, taps, cols));
        let z = self.linear(g, x, "frontend.conv3d");
        let z = g.swish(z);

        let c1 = cfg.frontend_channels;
        let h2 = (h1 - 1) / 2 + 1;
        let w2 = (w1 - 1) / 2 + 1;
        let mut index = Vec::with_capacity(t_len * h2 * w2 * 9 * c1);
        for t in 0..t_len {
            for oy in 0..h2 {
                for ox in 0..w2 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let sy = (oy * 2 + ky).checked_sub(1).filter(|&s| s < h1);
                            let sx = (ox * 2 + kx).checked_sub(1).filter(|&s| s < w1);
                            for c in 0..c1 {
                                index.push(match (sy, sx) {
                                    (Some(sy), Some(sx)) => ((t * h1 + sy) * w1 + sx) * c1 + c,
                                    _ => ZERO_INDEX,
                                });
                            }
                        }
                    }
                }
            }
        }
        let patches = g.gather(z, index, t_len * h2 * w2, 9 * c1);
        let z = self.linear(g, patches, "frontend.conv2d");
        let z = g.swish(z);
        let pooled = g.group_mean(z, h2 * w2);
        let feats = self.linear(g, pooled, "frontend.proj");
        if cfg.relative_positions {
            Ok(feats)
        } else {
            let pe = g.leaf(positional_encoding(t_len, cfg.d_model));
            Ok(g.add(feats, pe))
        }
    }

    /// Conformer-style layers over `x` (`T × d`); shape preserving.
    pub fn encoder(&self, g: &mut Graph, mut x: Var) -> Var {
        for l in 0..self.cfg.encoder_layers {
            let p = format!("enc.{l}");
            let f = self.ffn(g, x, &format!("{p}.ffn1"));
            let f = g.scale(f, 0.5);
            x = g.add(x, f);
            let a = self.attention(g, &format!("{p}.mhsa"), x, None, None, self.cfg.relative_positions);
            x = g.add(x, a);
            let c = self.conv_module(g, x, &format!("{p}.conv"));
            x = g.add(x, c);
            let f = self.ffn(g, x, &format!("{p}.ffn2"));
            let f = g.scale(f, 0.5);
            x = g.add(x, f);
        }
        x
    }

    fn conv_module(&self, g: &mut Graph, x: Var, p: &str) -> Var {
        let d = self.cfg.d_model;
        let h = self.norm(g, x, &format!("{p}.ln"));
        let h = self.linear(g, h, &format!("{p}.pw1"));
        let a = g.slice_cols(h, 0, d);
        let b = g.slice_cols(h, d, d);
        let gate = g.sigmoid(b);
        let h = g.mul(a, gate);
        let w = self.p(g, &format!("{p}.dw.w"));
        let h = g.depthwise_conv(h, w);
        let bias = self.p(g, &format!("{p}.dw.b"));
        let h = g.add_row(h, bias);
        let h = g.swish(h);
        self.linear(g, h, &format!("{p}.pw2"))
    }

    /// Frontend followed by the encoder.
    pub fn encode_graph(&self, g: &mut Graph, clip: &RoiClip) -> Result<Var> {
        let f = self.frontend(g, clip)?;
        Ok(self.encoder(g, f))
    }

    pub fn ctc_log_probs_graph(&self, g: &mut Graph, enc: Var) -> Var {
        let logits = self.linear(g, enc, "ctc");
        g.log_softmax(logits)
    }

    fn check_labels(&self, labels: &[usize]) -> Result<()> {
        for &t in labels {
            if t >= self.cfg.vocab_size {
                return Err(Error::InvalidToken {
                    id: t,
                    size: self.cfg.vocab_size,
                });
            }
            if t == self.cfg.blank_id() {
                return Err(Error::BlankInLabels(t));
            }
            if t == self.cfg.eos_id() {
                return Err(Error::invalid("label sequence contains eos"));
            }
        }
        Ok(())
    }

    /// Teacher-forced decoder over inputs `[eos] + labels`; returns the `(|labels|+1) × V`
    /// log-probability rows, row r predicting `labels[r]` (or eos at the end).
    pub fn decoder_graph(&self, g: &mut Graph, enc: Var, labels: &[usize]) -> Result<Var> {
        self.check_labels(labels)?;
        if g.value(enc).rows == 0 {
            return Err(Error::invalid("decoder needs non-empty latents"));
        }
        let d = self.cfg.d_model;
        let n = labels.len() + 1;
        let inputs: Vec<usize> = std::iter::once(self.cfg.eos_id()).chain(labels.iter().copied()).collect();
        let embed = self.p(g, "dec.embed");
        let index = inputs.iter().flat_map(|&tok| (0..d).map(move |c| tok * d + c)).collect();
        let e = g.gather(embed, index, n, d);
        let pe = g.leaf(positional_encoding(n, d));
        let mut x = g.add(e, pe);
        let mask = g.leaf(Matrix::from_fn(n, n, |i, j| if j <= i { 0.0 } else { f64::NEG_INFINITY }));
        for l in 0..self.cfg.decoder_layers {
            let p = format!("dec.{l}");
            let a = self.attention(g, &format!("{p}.self"), x, None, Some(mask), false);
            x = g.add(x, a);
            let c = self.attention(g, &format!("{p}.cross"), x, Some(enc), None, false);
            x = g.add(x, c);
            let f = self.ffn(g, x, &format!("{p}.ffn"));
            x = g.add(x, f);
        }
        let x = self.norm(g, x, "dec.ln");
        let logits = self.linear(g, x, "dec.out");
        Ok(g.log_softmax(logits))
    }

    /// `−Σ log p_attn(y_r | y_<r)` over `labels + [eos]` for decoder output `logprobs`.
    pub fn attention_nll_graph(&self, g: &mut Graph, logprobs: Var, labels: &[usize]) -> Var {
        let v = self.cfg.vocab_size;
        let index = labels
            .iter()
            .copied()
            .chain(std::iter::once(self.cfg.eos_id()))
            .enumerate()
            .map(|(r, y)| r * v + y)
            .collect::<Vec<_>>();
        let n = index.len();
        let picked = g.gather(logprobs, index, 1, n);
        let s = g.sum(picked);
        g.scale(s, -1.0)
    }

    /// Hybrid objective `α·CTC-NLL + (1−α)·attention-NLL` of one example.
    pub fn loss_graph(&self, g: &mut Graph, clip: &RoiClip, labels: &[usize], alpha: f64) -> Result<LossParts> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid(format!("α = {alpha} outside [0, 1]")));
        }
        self.check_labels(labels)?;
        let enc = self.encode_graph(g, clip)?;
        let mut terms = Vec::new();
        let mut ctc_nll = f64::NAN;
        let mut attn_nll = f64::NAN;
        if alpha > 0.0 {
            let lp = self.ctc_log_probs_graph(g, enc);
            let c = g.ctc_nll(lp, labels, self.cfg.blank_id())?;
            ctc_nll = g.scalar(c);
            terms.push(g.scale(c, alpha));
        }
        if alpha < 1.0 {
            let lp = self.decoder_graph(g, enc, labels)?;
            let a = self.attention_nll_graph(g, lp, labels);
            attn_nll = g.scalar(a);
            terms.push(g.scale(a, 1.0 - alpha));
        }
        let loss = match terms[..] {
            [t] => t,
            [a, b] => g.add(a, b),
            _ => unreachable!("α selects at least one term"),
        };
        Ok(LossParts {
            loss,
            ctc_nll,
            attn_nll,
        })
    }

    pub fn encode(&self, clip: &RoiClip) -> Result<Encoded> {
        let mut g = Graph::new();
        let enc = self.encode_graph(&mut g, clip)?;
        let lp = self.ctc_log_probs_graph(&mut g, enc);
        let latents = g.value(enc).clone();
        if !latents.is_finite() {
            return Err(Error::Numerical("encoder produced non-finite latents".into()));
        }
        let m = g.value(lp);
        let ctc = CtcPosterior::from_log_probs(m.rows, m.cols, m.data.clone())?;
        Ok(Encoded { latents, ctc })
    }

    /// Decoder log-probabilities given precomputed latents.
    pub fn decoder_log_probs(&self, latents: &Matrix, labels: &[usize]) -> Result<Matrix> {
        let mut g = Graph::new();
        let enc = g.leaf(latents.clone());
        let lp = self.decoder_graph(&mut g, enc, labels)?;
        Ok(g.value(lp).clone())
    }

    /// Next-token log-probabilities after `prefix`.
    pub fn decoder_score_step(&self, latents: &Matrix, prefix: &[usize]) -> Result<Vec<f64>> {
        let m = self.decoder_log_probs(latents, prefix)?;
        Ok(m.row(prefix.len()).to_vec())
    }

    pub fn attention_scorer<'a>(&'a self, latents: &'a Matrix) -> AttentionScorer<'a> {
        AttentionScorer {
            model: self,
            latents,
        }
    }

    pub fn to_checkpoint(&self, vocab_hash: &str) -> Result<Vec<u8>> {
        self.to_checkpoint_with_notes(vocab_hash, "")
    }

    /// Like [`Model::to_checkpoint`], additionally storing free text (one f32 per byte)
    /// under `meta.notes` when `notes` is non-empty.
    pub fn to_checkpoint_with_notes(&self, vocab_hash: &str, notes: &str) -> Result<Vec<u8>> {
        let hash = u64::from_str_radix(vocab_hash, 16)
            .map_err(|_| Error::invalid(format!("vocabulary hash {vocab_hash:?} is not 16 hex digits")))?;
        let chunks = (0..4).map(|i| ((hash >> (48 - 16 * i)) & 0xffff) as f32).collect();
        let meta = self.cfg.to_meta();
        let mut records = vec![
            Record {
                name: "meta.vocab_hash".into(),
                dims: vec![4],
                values: chunks,
            },
            Record {
                name: "meta.config".into(),
                dims: vec![meta.len()],
                values: meta,
            },
        ];
        if !notes.is_empty() {
            records.push(Record {
                name: "meta.notes".into(),
                dims: vec![notes.len()],
                values: notes.bytes().map(f32::from).collect(),
            });
        }
        for (name, m) in self.params.iter() {
            records.push(Record {
                name: name.to_string(),
                dims: vec![m.rows, m.cols],
                values: m.data.iter().map(|&v| v as f32).collect(),
            });
        }
        Ok(write_checkpoint(&records))
    }

    /// Parses a checkpoint; returns the model and the vocabulary hash it was trained with.
    pub fn from_checkpoint(bytes: &[u8]) -> std::result::Result<(Self, String), String> {
        let records = read_checkpoint(bytes)?;
        let find = |name: &str| records.iter().find(|r| r.name == name);
        let hash = find("meta.vocab_hash").ok_or("missing vocabulary hash record")?;
        if hash.values.len() != 4 {
            return Err("malformed vocabulary hash record".into());
        }
        let hash = hash
            .values
            .iter()
            .fold(0u64, |acc, &v| (acc << 16) | (v as u64 & 0xffff));
        let cfg = ModelConfig::from_meta(&find("meta.config").ok_or("missing configuration record")?.values)?;
        let mut model = Model::new(cfg, 0).map_err(|e| e.to_string())?;
        for idx in 0..model.params.len() {
            let name = model.params.name(idx).to_string();
            let r = find(&name).ok_or_else(|| format!("missing parameter {name}"))?;
            let m = model.params.value_mut(idx);
            if r.dims != [m.rows, m.cols] {
                return Err(format!("parameter {name} has shape {:?}, expected [{}, {}]", r.dims, m.rows, m.cols));
            }
            m.data = r.values.iter().map(|&v| v as f64).collect();
        }
        if !model.params.all_finite() {
            return Err("checkpoint holds non-finite parameters".into());
        }
        Ok((model, format!("{hash:016x}")))
    }

    pub fn save(&self, path: &Path, vocab_hash: &str, notes: &str) -> Result<()> {
        let bytes = self.to_checkpoint_with_notes(vocab_hash, notes)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint and refuses it unless it was trained with `vocab_hash`.
    pub fn load(path: &Path, vocab_hash: &str) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (model, found) = Self::from_checkpoint(&bytes).map_err(|m| Error::format(path, m))?;
        if found != vocab_hash {
            return Err(Error::VocabMismatch {
                what: format!("checkpoint {}", path.display()),
                expected: vocab_hash.to_string(),
                found,
            });
        }
        Ok(model)
    }
}

/// The `meta.notes` text of a checkpoint (empty when absent).
pub fn checkpoint_notes(bytes: &[u8]) -> std::result::Result<String, String> {
    let records = read_checkpoint(bytes)?;
    let Some(r) = records.iter().find(|r| r.name == "meta.notes") else {
        return Ok(String::new());
    };
    let bytes: Vec<u8> = r.values.iter().map(|&v| v as u8).collect();
    String::from_utf8(bytes).map_err(|_| "checkpoint notes are not UTF-8".to_string())
}

/// The attention decoder over fixed latents, as an incremental scorer.
pub struct AttentionScorer<'a> {
    model: &'a Model,
    latents: &'a Matrix,
}

impl SequenceScorer for AttentionScorer<'_> {
    fn next_log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        self.model.decoder_score_step(self.latents, prefix)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctc::ctc_loss;
    use crate::math::log_sum_exp;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            encoder_layers: 1,
            decoder_layers: 1,
            heads: 2,
            ffn_dim: 16,
            frontend_channels: 4,
            spatial_channels: 4,
            vocab_size: 6,
            ..ModelConfig::default()
        }
    }

    pub(crate) fn random_clip(seed: u64, frames: usize, size: usize) -> RoiClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..frames * size * size).map(|_| rng.random_range(-1.0..1.0)).collect();
        RoiClip::new(frames, size, size, data).unwrap()
    }

    #[test]
    fn frontend_output_shape() {
        let model = Model::new(tiny_config(), 1).unwrap();
        for t in [1, 2, 7] {
            let mut g = Graph::new();
            let f = model.frontend(&mut g, &random_clip(t as u64, t, 16)).unwrap();
            assert_eq!((g.value(f).rows, g.value(f).cols), (t, 8));
        }
        assert_eq!(ModelConfig::default().frontend_output_size(88), (22, 11));
    }

    #[test]
    fn zero_input_and_biases_give_positional_encoding_only() {
        let model = Model::new(tiny_config(), 2).unwrap();
        let clip = RoiClip::new(3, 16, 16, vec![0.0; 3 * 256]).unwrap();
        let mut g = Graph::new();
        let f = model.frontend(&mut g, &clip).unwrap();
        assert_eq!(g.value(f), &positional_encoding(3, 8));
        let bad = RoiClip::new(1, 16, 16, vec![f64::NAN; 256]).unwrap();
        assert!(model.frontend(&mut Graph::new(), &bad).is_err());
    }

    #[test]
    fn zeroed_residual_branches_make_encoder_identity() {
        let mut model = Model::new(ModelConfig { relative_positions: true, ..tiny_config() }, 3).unwrap();
        for idx in 0..model.params.len() {
            let name = model.params.name(idx).to_string();
            let is_out = [".ffn1.w2.", ".ffn2.w2.", ".mhsa.o.", ".conv.pw2."].iter().any(|s| name.contains(s));
            if name.starts_with("enc.") && is_out {
                model.params.value_mut(idx).data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let mut g = Graph::new();
        let x = g.leaf(Matrix::from_fn(5, 8, |i, j| (i * 8 + j) as f64 * 0.1 - 2.0));
        let y = model.encoder(&mut g, x);
        assert_eq!(g.value(x), g.value(y));
    }

    #[test]
    fn decoder_rows_are_distributions_and_causal() {
        let model = Model::new(tiny_config(), 4).unwrap();
        let latents = Matrix::from_fn(4, 8, |i, j| ((i * 3 + j) as f64).sin());
        let lp = model.decoder_log_probs(&latents, &[1, 2, 3]).unwrap();
        assert_eq!((lp.rows, lp.cols), (4, 6));
        for r in 0..lp.rows {
            assert!((log_sum_exp(lp.row(r)).exp() - 1.0).abs() <= 1e-9);
        }
        for k in 0..3 {
            let mut changed = vec![1, 2, 3];
            changed[k] = 4;
            let other = model.decoder_log_probs(&latents, &changed).unwrap();
            for r in 0..=k {
                assert_eq!(lp.row(r), other.row(r), "row {r} moved when label {k} changed");
            }
        }
    }

    #[test]
    fn score_step_matches_full_forward() {
        let model = Model::new(tiny_config(), 5).unwrap();
        let latents = Matrix::from_fn(3, 8, |i, j| ((i * 5 + j) as f64).cos());
        let empty = model.decoder_score_step(&latents, &[]).unwrap();
        assert_eq!(empty.len(), 6);
        assert!((log_sum_exp(&empty).exp() - 1.0).abs() <= 1e-9);
        let labels = [1, 2, 3, 4];
        let mut prefixes = vec![vec![]];
        for len in 1..=3 {
            for p in prefixes.clone().into_iter().filter(|p: &Vec<usize>| p.len() == len - 1) {
                for &c in &labels {
                    let mut q = p.clone();
                    q.push(c);
                    prefixes.push(q);
                }
            }
        }
        for g in prefixes {
            let step = model.decoder_score_step(&latents, &g).unwrap();
            for &c in &[1, 2, 3, 4] {
                let mut full_in = g.clone();
                full_in.push(c);
                let full = model.decoder_log_probs(&latents, &full_in).unwrap();
                for k in 0..6 {
                    assert!((step[k] - full.get(g.len(), k)).abs() <= 1e-9);
                }
            }
        }
        assert!(model.decoder_score_step(&latents, &[5]).is_err());
        assert!(model.decoder_score_step(&Matrix::zeros(0, 8), &[]).is_err());
    }

    #[test]
    fn hybrid_loss_endpoints() {
        assert_eq!(hybrid_loss(-2.0, -1.0, 1.0).unwrap(), 2.0);
        assert_eq!(hybrid_loss(-2.0, -1.0, 0.0).unwrap(), 1.0);
        assert!((hybrid_loss(-2.0, -1.0, 0.1).unwrap() - 1.1).abs() < 1e-15);
        assert_eq!(hybrid_loss(f64::NEG_INFINITY, -1.0, 0.0).unwrap(), 1.0);
        assert!(hybrid_loss(-2.0, -1.0, 1.5).is_err());
        assert!(hybrid_loss(-2.0, -1.0, -0.1).is_err());
    }

    #[test]
    fn loss_graph_matches_independent_terms() {
        let model = Model::new(tiny_config(), 6).unwrap();
        let clip = random_clip(9, 4, 16);
        let labels = [1, 2, 2];
        let enc = model.encode(&clip).unwrap();
        let ctc = ctc_loss(&enc.ctc, &labels, 0).unwrap().nll;
        let lp = model.decoder_log_probs(&enc.latents, &labels).unwrap();
        let attn = -(lp.get(0, 1) + lp.get(1, 2) + lp.get(2, 2) + lp.get(3, 5));
        for alpha in [0.0, 0.1, 1.0] {
            let mut g = Graph::new();
            let parts = model.loss_graph(&mut g, &clip, &labels, alpha).unwrap();
            let want = hybrid_loss(-ctc, -attn, alpha).unwrap();
            assert!((g.scalar(parts.loss) - want).abs() <= 1e-10 * want.abs().max(1.0));
        }
        assert!(model.loss_graph(&mut Graph::new(), &clip, &[0], 0.1).is_err());
        assert!(model.loss_graph(&mut Graph::new(), &clip, &[5], 0.1).is_err());
    }

    #[test]
    fn checkpoint_round_trip_and_vocab_guard() {
        let model = Model::new(tiny_config(), 7).unwrap();
        let bytes = model.to_checkpoint("0123456789abcdef").unwrap();
        let (back, hash) = Model::from_checkpoint(&bytes).unwrap();
        assert_eq!(hash, "0123456789abcdef");
        assert_eq!(back.cfg, model.cfg);
        for ((_, a), (_, b)) in model.params.iter().zip(back.params.iter()) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert_eq!(*x as f32 as f64, *y);
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.lpck");
        model.save(&path, "0123456789abcdef", "seed = 3\nbeam = 10").unwrap();
        assert!(Model::load(&path, "0123456789abcdef").is_ok());
        let saved = std::fs::read(&path).unwrap();
        assert_eq!(checkpoint_notes(&saved).unwrap(), "seed = 3\nbeam = 10");
        assert_eq!(checkpoint_notes(&bytes).unwrap(), "");
        assert!(matches!(Model::load(&path, "ffffffffffffffff"), Err(Error::VocabMismatch { .. })));
        assert!(Model::from_checkpoint(&bytes[..bytes.len() - 2]).is_err());
    }

    #[test]
    fn initialization_is_seeded() {
        let a = Model::new(tiny_config(), 11).unwrap();
        let b = Model::new(tiny_config(), 11).unwrap();
        let c = Model::new(tiny_config(), 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
