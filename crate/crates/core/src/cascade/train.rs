//! Mini-batch ADAM training against clean patches.

use fpnr_tensor::{adam_step, AdamConfig, Gradients, Graph, Scalar, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{CascadeModel, ForwardOptions};
use crate::error::{config_err, FpnrError, Result};
use crate::image::Image;
use crate::metrics::{psnr, roughness, DEFAULT_MAX_VAL};
use crate::sim::{stream_rng, PatchDataset, PatchPair};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Mse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Zero epochs is allowed and leaves the model untouched.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// The rate is multiplied by `lr_decay_factor` every `lr_decay_epochs`.
    pub lr_decay_factor: f64,
    pub lr_decay_epochs: usize,
    pub loss: LossKind,
    pub seed: u64,
    /// Adds the loss of the gain-corrected image `G * y` against the clean patch.
    pub intermediate_supervision: bool,
    /// Worker threads per batch. Shards are reduced in a fixed order, so a
    /// given thread count is reproducible; 1 is the reference mode.
    pub threads: usize,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 128,
            lr0: 1e-3,
            lr_decay_factor: 0.1,
            lr_decay_epochs: 25,
            loss: LossKind::Mse,
            seed: 0,
            intermediate_supervision: false,
            threads: 1,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return config_err("batch_size must be at least 1");
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return config_err(format!("lr0 must be positive and finite, got {}", self.lr0));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return config_err(format!(
                "lr_decay_factor must lie in (0, 1], got {}",
                self.lr_decay_factor
            ));
        }
        if self.lr_decay_epochs == 0 {
            return config_err("lr_decay_epochs must be at least 1");
        }
        if self.threads == 0 {
            return config_err("threads must be at least 1");
        }
        Ok(())
    }

    /// Learning rate used throughout `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0
            * self
                .lr_decay_factor
                .powi((epoch / self.lr_decay_epochs) as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

pub fn history_csv(history: &[StepRecord]) -> String {
    let mut out = String::from("step,epoch,lr,loss\n");
    for r in history {
        out.push_str(&format!("{},{},{},{}\n", r.step, r.epoch, r.lr, r.loss));
    }
    out
}

/// Loss and gradients of one shard, with the loss weighted by `weight`.
fn shard_gradients<T: Scalar>(
    model: &CascadeModel<T>,
    pairs: &[&PatchPair<T>],
    weight: f64,
    intermediate: bool,
) -> Result<(f64, Gradients<T>)> {
    let corrupted: Vec<&Image<T>> = pairs.iter().map(|p| &p.corrupted).collect();
    let clean: Vec<&Image<T>> = pairs.iter().map(|p| &p.clean).collect();
    let target: Tensor<T> = Image::batch_tensor(&clean)?;
    let mut g = Graph::new();
    let y = g.constant(Image::batch_tensor(&corrupted)?);
    let vars = model.forward_graph(&mut g, y, ForwardOptions::default())?;
    let mut loss = g.mse(vars.x_hat, target.clone())?;
    if intermediate {
        let aux = g.mse(vars.gain_corrected, target)?;
        loss = g.add(loss, aux)?;
    }
    let loss = g.scale(loss, T::from_f64_lossy(weight));
    let value = g.value(loss).data()[0].to_f64_lossy();
    Ok((value, g.gradients(loss)?))
}

fn batch_gradients<T: Scalar>(
    model: &CascadeModel<T>,
    batch: &[&PatchPair<T>],
    cfg: &TrainConfig,
) -> Result<(f64, Gradients<T>)> {
    let n = batch.len();
    let workers = cfg.threads.min(n);
    if workers <= 1 {
        return shard_gradients(model, batch, 1.0, cfg.intermediate_supervision);
    }
    let chunk = n.div_ceil(workers);
    let results: Vec<Result<(f64, Gradients<T>)>> = std::thread::scope(|s| {
        let handles: Vec<_> = batch
            .chunks(chunk)
            .map(|shard| {
                let w = shard.len() as f64 / n as f64;
                s.spawn(move || shard_gradients(model, shard, w, cfg.intermediate_supervision))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training worker panicked"))
            .collect()
    });
    let mut total = 0.0;
    let mut grads = Gradients::empty(model.params().len());
    for r in results {
        let (l, g) = r?;
        total += l;
        grads.merge(g);
    }
    Ok((total, grads))
}

/// Trains `model` in place and returns the per-step loss history.
pub fn train_model<T: Scalar>(
    model: &mut CascadeModel<T>,
    dataset: &PatchDataset<T>,
    cfg: &TrainConfig,
) -> Result<Vec<StepRecord>> {
    cfg.validate()?;
    let mut history = Vec::new();
    if cfg.epochs == 0 || cfg.max_steps == Some(0) {
        return Ok(history);
    }
    if dataset.is_empty() {
        return Err(FpnrError::EmptyDataset(
            "training dataset has no patches".into(),
        ));
    }
    let adam = AdamConfig::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.sort_unstable();
        order.shuffle(&mut stream_rng(cfg.seed, epoch as u64));
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&PatchPair<T>> = idx.iter().map(|&i| &dataset.pairs[i]).collect();
            let (loss, grads) = batch_gradients(model, &batch, cfg)?;
            if !loss.is_finite() {
                return Err(FpnrError::NonFiniteLoss { batch: step, lr });
            }
            let store = model.params_mut();
            store.zero_grad();
            store.accumulate(&grads);
            adam_step(store.iter_mut(), lr, &adam);
            history.push(StepRecord {
                step,
                epoch,
                lr,
                loss,
            });
            if step % 50 == 0 {
                log::info!("epoch {epoch} step {step}: loss {loss:.4} (lr {lr})");
            }
            step += 1;
            if cfg.max_steps.is_some_and(|m| step >= m) {
                return Ok(history);
            }
        }
    }
    Ok(history)
}

/// Mean quality of the corrupted inputs and of the model's corrections.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub count: usize,
    pub corrupted_psnr: f64,
    pub corrected_psnr: f64,
    pub corrupted_roughness: f64,
    pub corrected_roughness: f64,
}

pub fn evaluate<T: Scalar>(model: &CascadeModel<T>, pairs: &[PatchPair<T>]) -> Result<EvalSummary> {
    if pairs.is_empty() {
        return Err(FpnrError::EmptyDataset(
            "evaluation set has no patches".into(),
        ));
    }
    let mut s = [0.0f64; 4];
    for p in pairs {
        let out = model.correct_image(&p.corrupted)?;
        s[0] += psnr(&p.clean, &p.corrupted, DEFAULT_MAX_VAL)?;
        s[1] += psnr(&p.clean, &out, DEFAULT_MAX_VAL)?;
        s[2] += roughness(&p.corrupted)?;
        s[3] += roughness(&out)?;
    }
    let n = pairs.len() as f64;
    Ok(EvalSummary {
        count: pairs.len(),
        corrupted_psnr: s[0] / n,
        corrected_psnr: s[1] / n,
        corrupted_roughness: s[2] / n,
        corrected_roughness: s[3] / n,
    })
}
