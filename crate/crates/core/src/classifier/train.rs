use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::{argmax, batch_pass};
use super::{forward, Arch, Model, Params};
use crate::error::{Error, Result};
use crate::features::FeatureStack;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Linear learning-rate ramp from `lr / steps` to `lr` over this many
    /// epochs; 0 disables it.
    pub warmup_epochs: usize,
    /// Rescales a batch gradient whose global L2 norm exceeds this.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 150,
            epochs: 500,
            seed: 7,
            warmup_epochs: 0,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(format!(
                "batch_size={} and epochs={} must both be >= 1",
                self.batch_size, self.epochs
            )));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "learning_rate={} must be positive and momentum={} in [0, 1)",
                self.learning_rate, self.momentum
            )));
        }
        Ok(())
    }
}

/// Heavy-ball velocity, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Momentum {
    pub velocity: Params,
}

impl Momentum {
    pub fn new(arch: &Arch) -> Self {
        Self {
            velocity: Params::zeroed(arch),
        }
    }
}

/// `v = momentum * v + g`, `p -= lr * v`.
pub fn sgdm_step(params: &mut Params, grads: &Params, state: &mut Momentum, lr: f64, momentum: f64) {
    let grads = grads.named();
    for ((p, v), (_, g)) in params
        .tensors_mut()
        .into_iter()
        .zip(state.velocity.tensors_mut())
        .zip(grads)
    {
        for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
            *vi = momentum * *vi + gi;
            *pi -= lr * *vi;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: Model,
    pub log: Vec<EpochLog>,
}

fn labelled(stacks: &[FeatureStack]) -> Result<Vec<(&FeatureStack, usize)>> {
    stacks
        .iter()
        .map(|s| {
            s.label.map(|l| (s, l.index())).ok_or_else(|| Error::InvalidLabel {
                label: format!("missing label on {:?}", s.segment_ref),
                row: None,
            })
        })
        .collect()
}

/// Mean cross-entropy and accuracy of `model` on labelled stacks.
pub(crate) fn evaluate(items: &[(&FeatureStack, usize)], model: &Model) -> Result<(f64, f64)> {
    let probs: Vec<Result<_>> = items.par_iter().map(|(s, _)| forward(s, model)).collect();
    let mut loss = 0.0;
    let mut correct = 0;
    for (p, &(_, label)) in probs.into_iter().zip(items) {
        let p = p?;
        loss -= p[label].ln();
        correct += usize::from(argmax(&p).index() == label);
    }
    let n = items.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Trains a fresh model. Initialization and the per-epoch shuffles all draw
/// from one generator seeded with `cfg.seed`, so the result is a pure
/// function of the inputs.
pub fn train(
    data: &[FeatureStack],
    validation: Option<&[FeatureStack]>,
    cfg: &TrainConfig,
    heads: usize,
    d_head: usize,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let items = labelled(data)?;
    let mut present = [false; super::N_CLASSES];
    items.iter().for_each(|&(_, l)| present[l] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::DegenerateDataset("training needs at least two classes".into()));
    }
    let m = data[0].m();
    let arch = Arch::new(m, heads, d_head)?;
    let val_items = validation.map(labelled).transpose()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::new(arch, cfg.seed, &mut rng);
    let mut state = Momentum::new(&model.arch);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let warmup_steps = cfg.warmup_epochs * items.len().div_ceil(cfg.batch_size);
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<_> = idx.iter().map(|&i| items[i]).collect();
            let r = batch_pass(&batch, &model)?;
            loss_sum += r.loss_sum;
            correct += r.correct;
            let mut grad = r.grad_sum;
            grad.scale(1.0 / batch.len() as f64);
            if let Some(limit) = cfg.clip_norm {
                let norm = grad.to_flat().iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > limit {
                    grad.scale(limit / norm);
                }
            }
            step += 1;
            let lr = if step <= warmup_steps {
                cfg.learning_rate * step as f64 / warmup_steps as f64
            } else {
                cfg.learning_rate
            };
            sgdm_step(&mut model.params, &grad, &mut state, lr, cfg.momentum);
        }
        let n = items.len() as f64;
        let (val_loss, val_acc) = match &val_items {
            Some(v) if !v.is_empty() => {
                let (l, a) = evaluate(v, &model)?;
                (Some(l), Some(a))
            }
            _ => (None, None),
        };
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_loss,
            val_acc,
        };
        log::info!(
            "epoch {epoch}: train loss {:.4} acc {:.3}{}",
            entry.train_loss,
            entry.train_acc,
            match (val_loss, val_acc) {
                (Some(l), Some(a)) => format!(", val loss {l:.4} acc {a:.3}"),
                _ => String::new(),
            }
        );
        log.push(entry);
    }
    Ok(TrainOutput { model, log })
}
