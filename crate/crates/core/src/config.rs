//! Flat `key = value` run configuration shared by every command, with the ablation switches.

use std::path::Path;

use crate::decode::DecodeConfig;
use crate::error::{Error, Result};
use crate::eval::DEFAULT_REPLICATES;
use crate::nn::{ModelConfig, TrainConfig};
use crate::synth::{SynthSpec, TextSource};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: usize,

    pub d_model: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub relative_positions: bool,

    pub epochs: usize,
    pub lr: f64,
    pub alpha: f64,
    pub crop: usize,
    pub weight_decay: f64,
    pub clip_norm: f64,

    pub lm_order: usize,
    pub lm_k: f64,

    pub lambda: f64,
    pub beta: f64,
    pub beam: usize,
    pub penalty: f64,
    pub max_len: usize,

    pub replicates: usize,
    pub top_n: usize,

    pub utterances: usize,
    pub min_chars: usize,
    pub max_chars: usize,
    pub frames_per_char: usize,
    pub noise_std: f64,
    pub zipf_exponent: f64,

    pub no_augment: bool,
    pub no_lm: bool,
    pub no_lm_finetune: bool,
    pub ctc_only: bool,
    pub attn_only: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        let decode = DecodeConfig::default();
        let synth = SynthSpec::default();
        Self {
            seed: 0,
            jobs: 1,
            d_model: model.d_model,
            encoder_layers: model.encoder_layers,
            decoder_layers: model.decoder_layers,
            heads: model.heads,
            ffn_dim: model.ffn_dim,
            relative_positions: model.relative_positions,
            epochs: train.epochs,
            lr: train.lr,
            alpha: train.alpha,
            crop: train.crop,
            weight_decay: train.weight_decay,
            clip_norm: train.clip_norm,
            lm_order: 4,
            lm_k: 0.1,
            lambda: decode.lambda,
            beta: decode.beta,
            beam: decode.beam,
            penalty: decode.penalty,
            max_len: decode.max_len,
            replicates: DEFAULT_REPLICATES,
            top_n: 100,
            utterances: synth.utterances,
            min_chars: synth.min_chars,
            max_chars: synth.max_chars,
            frames_per_char: synth.frames_per_char,
            noise_std: synth.noise_std,
            zipf_exponent: 1.0,
            no_augment: false,
            no_lm: false,
            no_lm_finetune: false,
            ctc_only: false,
            attn_only: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::invalid(format!("bad boolean {value:?} for {key}"))),
    }
}

macro_rules! fields {
    ($mac:ident) => {
        $mac!(
            seed jobs d_model encoder_layers decoder_layers heads ffn_dim epochs crop lm_order beam
            max_len replicates top_n utterances min_chars max_chars frames_per_char;
            lr alpha weight_decay clip_norm lm_k lambda beta penalty noise_std zipf_exponent;
            relative_positions no_augment no_lm no_lm_finetune ctc_only attn_only
        )
    };
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        macro_rules! assign {
            ($($int:ident)*; $($float:ident)*; $($flag:ident)*) => {
                match key.trim() {
                    $(stringify!($int) => self.$int = parse(key, value)?,)*
                    $(stringify!($float) => self.$float = parse(key, value)?,)*
                    $(stringify!($flag) => self.$flag = parse_bool(key, value)?,)*
                    other => return Err(Error::invalid(format!("unknown configuration key {other:?}"))),
                }
            };
        }
        fields!(assign);
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("config line {}: expected key = value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Every key with its value, in a fixed order; parses back to the same configuration.
    /// `jobs` is left out so that artifacts do not depend on the thread count.
    pub fn to_lines(&self) -> Vec<String> {
        let mut out = Vec::new();
        macro_rules! emit {
            ($($int:ident)*; $($float:ident)*; $($flag:ident)*) => {
                $(out.push(format!("{} = {}", stringify!($int), self.$int));)*
                $(out.push(format!("{} = {:?}", stringify!($float), self.$float));)*
                $(out.push(format!("{} = {}", stringify!($flag), self.$flag));)*
            };
        }
        fields!(emit);
        out.retain(|l| !l.starts_with("jobs ="));
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.ctc_only && self.attn_only {
            return Err(Error::invalid("ctc_only and attn_only are mutually exclusive"));
        }
        if self.jobs == 0 {
            return Err(Error::invalid("jobs must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("α = {} outside [0, 1]", self.alpha)));
        }
        if !(self.lm_k > 0.0 && self.lm_k.is_finite()) || self.lm_order == 0 {
            return Err(Error::invalid("LM order must be ≥ 1 and k > 0"));
        }
        self.model()?;
        self.decode().validate()?;
        self.synth().validate()
    }

    pub fn model(&self) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            d_model: self.d_model,
            encoder_layers: self.encoder_layers,
            decoder_layers: self.decoder_layers,
            heads: self.heads,
            ffn_dim: self.ffn_dim,
            relative_positions: self.relative_positions,
            ..ModelConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Effective CTC weight of the training loss after ablations.
    pub fn effective_alpha(&self) -> f64 {
        if self.ctc_only {
            1.0
        } else if self.attn_only {
            0.0
        } else {
            self.alpha
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            alpha: self.effective_alpha(),
            seed: self.seed,
            augment: !self.no_augment,
            crop: self.crop,
            weight_decay: self.weight_decay,
            clip_norm: self.clip_norm,
        }
    }

    pub fn decode(&self) -> DecodeConfig {
        let lambda = if self.ctc_only {
            1.0
        } else if self.attn_only {
            0.0
        } else {
            self.lambda
        };
        DecodeConfig {
            lambda,
            beta: if self.no_lm { 0.0 } else { self.beta },
            beam: self.beam,
            penalty: self.penalty,
            max_len: self.max_len,
        }
    }

    pub fn synth(&self) -> SynthSpec {
        SynthSpec {
            seed: self.seed,
            utterances: self.utterances,
            min_chars: self.min_chars,
            max_chars: self.max_chars,
            frames_per_char: self.frames_per_char,
            noise_std: self.noise_std,
            source: TextSource::Zipf {
                exponent: self.zipf_exponent,
            },
            ..SynthSpec::default()
        }
    }
}
