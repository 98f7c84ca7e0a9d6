//! Cross-entropy training of the design policy.

use std::path::PathBuf;

use candle_core::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::DesignExample;
use super::policy::{DesignPolicy, PolicyInput};
use crate::error::{Error, Result};
use crate::nn::{self, Trainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup: usize,
    pub clip: Option<f64>,
    pub holdout_fraction: f64,
    pub seed: u64,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for DesignTrainConfig {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 32, lr: 3e-3, warmup: 20, clip: Some(1.0), holdout_fraction: 0.1, seed: 0, checkpoint_dir: None }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DesignTrainReport {
    /// Mean per-token cross-entropy of each optimizer step.
    pub step_loss: Vec<f64>,
    /// Held-out cross-entropy before training and after each epoch.
    pub heldout_loss: Vec<f64>,
    pub train_size: usize,
    pub heldout_size: usize,
}

/// Tokenized example ready for teacher forcing.
pub struct Encoded {
    pub product_id: usize,
    pub instr: Vec<u32>,
    pub design: Vec<u32>,
}

pub fn encode(data: &[DesignExample]) -> Result<Vec<Encoded>> {
    data.iter()
        .map(|ex| {
            ex.validate()?;
            let (instr, design) = ex.token_ids()?;
            Ok(Encoded { product_id: ex.product_id, instr, design })
        })
        .collect()
}

/// Mean per-token cross-entropy (nats) over a batch, as a differentiable scalar.
pub fn cross_entropy(policy: &DesignPolicy, batch: &[&Encoded]) -> Result<Tensor> {
    let inputs: Vec<PolicyInput> = batch
        .iter()
        .map(|e| PolicyInput { product_id: e.product_id, instr: &e.instr, design: &e.design })
        .collect();
    let lp = policy.token_logprobs(&inputs)?;
    let weights: Vec<Vec<f64>> = lp.lens.iter().map(|&l| vec![1.0; l]).collect();
    let mask = lp.mask_like(&weights)?;
    let count: usize = lp.lens.iter().sum();
    Ok((lp.values.mul(&mask)?.sum_all()? / -(count as f64))?)
}

pub fn mean_cross_entropy(policy: &DesignPolicy, data: &[Encoded], batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut tokens = 0usize;
    for chunk in data.chunks(batch_size.max(1)) {
        let refs: Vec<&Encoded> = chunk.iter().collect();
        let n: usize = chunk.iter().map(|e| e.design.len()).sum();
        total += nn::scalar(&cross_entropy(policy, &refs)?)? * n as f64;
        tokens += n;
    }
    Ok(total / tokens.max(1) as f64)
}

/// Trains in place; returns the loss curves.
pub fn train_design(policy: &mut DesignPolicy, data: &[DesignExample], cfg: &DesignTrainConfig) -> Result<DesignTrainReport> {
    if data.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let mut encoded = encode(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    encoded.shuffle(&mut rng);
    let n_hold = if encoded.len() > 1 { ((encoded.len() as f64) * cfg.holdout_fraction).floor() as usize } else { 0 };
    let heldout: Vec<Encoded> = encoded.drain(..n_hold).collect();
    let train = encoded;

    let mut report = DesignTrainReport { train_size: train.len(), heldout_size: heldout.len(), ..Default::default() };
    if !heldout.is_empty() {
        report.heldout_loss.push(mean_cross_entropy(policy, &heldout, cfg.batch_size)?);
    }
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size.max(1));
    let total = steps_per_epoch * cfg.epochs;
    let mut trainer = Trainer::new(policy.params.vars(), cfg.lr, cfg.clip)?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let lr = nn::cosine_lr(cfg.lr, step, total, cfg.warmup.min(total / 10 + 1), 0.05);
            trainer.set_lr(lr);
            let batch: Vec<&Encoded> = chunk.iter().map(|&i| &train[i]).collect();
            let loss = cross_entropy(policy, &batch)?;
            let value = nn::scalar(&loss)?;
            if !value.is_finite() {
                return Err(Error::Diverged { step, lr, message: format!("loss {value}") });
            }
            trainer.step(&loss).map_err(|e| match e {
                Error::Diverged { message, .. } => Error::Diverged { step, lr, message },
                other => other,
            })?;
            report.step_loss.push(value);
            step += 1;
        }
        if !heldout.is_empty() {
            report.heldout_loss.push(mean_cross_entropy(policy, &heldout, cfg.batch_size)?);
        }
        log::info!(
            "design epoch {epoch}: train {:.4} heldout {:?}",
            report.step_loss.last().copied().unwrap_or(f64::NAN),
            report.heldout_loss.last()
        );
        if let Some(dir) = &cfg.checkpoint_dir {
            std::fs::create_dir_all(dir)?;
            policy.save(&dir.join(format!("design_epoch{epoch:03}.ckpt")))?;
        }
    }
    Ok(report)
}
