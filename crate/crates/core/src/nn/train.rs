//! Batch-size-1 training with AdamW and a one-cycle schedule.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::roi::{augment, AugmentConfig, NormStats, RoiClip};

use super::graph::Graph;
use super::model::Model;
use super::optim::{clip_grad_norm, AdamW, OneCycle};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub id: String,
    /// Raw (unnormalized) ROI clip.
    pub clip: RoiClip,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Peak learning rate of the one-cycle schedule.
    pub lr: f64,
    pub alpha: f64,
    pub seed: u64,
    pub augment: bool,
    pub crop: usize,
    pub weight_decay: f64,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            lr: 2e-3,
            alpha: 0.1,
            seed: 0,
            augment: true,
            crop: crate::roi::TRAIN_CROP,
            weight_decay: 0.01,
            clip_norm: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Examples skipped because their CTC target could not be aligned.
    pub skipped: usize,
    pub lr: f64,
}

/// Crops (randomly when `augment_seed` is given, centrally otherwise) and normalizes a raw
/// clip into model input.
pub fn prepare_input(clip: &RoiClip, stats: &NormStats, crop: usize, augment_seed: Option<u64>) -> Result<RoiClip> {
    let crop = crop.min(clip.height).min(clip.width);
    let cropped = match augment_seed {
        Some(seed) => {
            let cfg = AugmentConfig {
                crop,
                ..AugmentConfig::default()
            };
            augment(clip, seed, &cfg)?.0
        }
        None => clip.center_crop(crop)?,
    };
    Ok(stats.normalize(&cropped))
}

/// Trains `model` in place. `on_epoch` sees each epoch's statistics and the current model
/// and returns `false` to stop early.
pub fn train(
    model: &mut Model,
    items: &[TrainItem],
    stats: &NormStats,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats, &Model) -> bool,
) -> Result<Vec<EpochStats>> {
    if items.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if cfg.epochs == 0 {
        return Err(Error::invalid("training needs at least one epoch"));
    }
    let schedule = OneCycle::new(cfg.lr, cfg.epochs * items.len())?;
    let mut opt = AdamW::new(&model.params, cfg.weight_decay);
    let mut history = Vec::new();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut rng);
        let (mut total, mut counted, mut skipped) = (0.0, 0usize, 0usize);
        let mut lr = 0.0;
        for &i in &order {
            let item = &items[i];
            let aug_seed: u64 = rng.random();
            let input = prepare_input(&item.clip, stats, cfg.crop, cfg.augment.then_some(aug_seed))?;
            let mut g = Graph::new();
            let parts = model.loss_graph(&mut g, &input, &item.labels, cfg.alpha)?;
            let loss = g.scalar(parts.loss);
            lr = schedule.lr(step);
            step += 1;
            if loss == f64::INFINITY && parts.ctc_nll == f64::INFINITY {
                log::warn!("{}: target cannot be aligned to {} frames; skipped", item.id, input.frames);
                skipped += 1;
                continue;
            }
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "loss became {loss} at epoch {epoch} on {}",
                    item.id
                )));
            }
            let grads = g.backward(parts.loss);
            let mut grads = g.param_grads(&grads, &model.params);
            let norm = clip_grad_norm(&mut grads, cfg.clip_norm);
            if !norm.is_finite() {
                return Err(Error::Numerical(format!("gradient norm {norm} on {}", item.id)));
            }
            opt.step(&mut model.params, &grads, lr);
            total += loss;
            counted += 1;
        }
        if !model.params.all_finite() {
            return Err(Error::Numerical(format!("parameters diverged in epoch {epoch}")));
        }
        let stats = EpochStats {
            epoch,
            mean_loss: if counted == 0 { f64::NAN } else { total / counted as f64 },
            skipped,
            lr,
        };
        log::info!(
            "epoch {} loss {:.4} lr {:.2e} skipped {}",
            epoch + 1,
            stats.mean_loss,
            lr,
            skipped
        );
        let keep_going = on_epoch(&stats, model);
        history.push(stats);
        if !keep_going {
            break;
        }
    }
    Ok(history)
}

/// Mean hybrid loss over `items` with deterministic center crops.
pub fn mean_loss(model: &Model, items: &[TrainItem], stats: &NormStats, crop: usize, alpha: f64) -> Result<f64> {
    let mut total = 0.0;
    for item in items {
        let input = prepare_input(&item.clip, stats, crop, None)?;
        let mut g = Graph::new();
        let parts = model.loss_graph(&mut g, &input, &item.labels, alpha)?;
        total += g.scalar(parts.loss);
    }
    Ok(total / items.len() as f64)
}
