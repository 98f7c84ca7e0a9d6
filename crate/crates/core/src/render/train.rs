//! Training loop for the renderer on synthetic posters.

use std::path::PathBuf;

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::compose::{make_sprite, synthesize_example, SynthExample};
use super::extractor::PerceptualExtractor;
use super::flow::{flow_interpolate_batch, target_velocity};
use super::loss::{one_step_reconstruction, render_loss, RenderLoss, DEFAULT_LAMBDA};
use super::model::RendererModel;
use super::raster::Raster;
use crate::design::data::DesignExample;
use crate::design::types::{Background, Design};
use crate::error::{Error, Result};
use crate::nn::{self, Trainer};
use crate::synth::{NUM_SPRITES, SPRITE_SIZE};

/// A design with its resolved texts, product sprite and synthesis seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderExample {
    pub design: Design,
    pub texts: Vec<String>,
    pub sprite: usize,
    pub seed: u64,
}

impl RenderExample {
    pub fn from_design_example(ex: &DesignExample, seed: u64) -> Result<Self> {
        let texts = ex.design.selected_texts(&ex.candidates)?.into_iter().map(String::from).collect();
        Ok(Self { design: ex.design.clone(), texts, sprite: ex.product_id % NUM_SPRITES, seed })
    }

    pub fn sprite_raster(&self) -> Raster {
        make_sprite(self.sprite, SPRITE_SIZE)
    }

    pub fn synthesize(&self, canvas: usize) -> Result<SynthExample> {
        let texts: Vec<&str> = self.texts.iter().map(String::as_str).collect();
        synthesize_example(&self.design, &texts, &self.sprite_raster(), canvas, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup: usize,
    pub clip: Option<f64>,
    pub lambda: f64,
    pub seed: u64,
    pub log_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for RenderTrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 16,
            lr: 1e-3,
            warmup: 100,
            clip: Some(1.0),
            lambda: DEFAULT_LAMBDA,
            seed: 0,
            log_every: 100,
            checkpoint_dir: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RenderTrainReport {
    pub loss: Vec<f64>,
    pub velocity_mse: Vec<f64>,
    pub feature_mse: Vec<f64>,
}

/// Token tensors of a synthesized batch.
pub struct RenderBatch {
    pub target_pixels: Tensor,
    pub target: Tensor,
    pub glyph: Tensor,
    pub product: Tensor,
    pub backgrounds: Vec<Background>,
}

pub fn make_batch(model: &RendererModel, examples: &[&RenderExample]) -> Result<RenderBatch> {
    let dt = model.dtype();
    let canvas = model.config.codec.canvas;
    let synth = examples.iter().map(|e| e.synthesize(canvas)).collect::<Result<Vec<_>>>()?;
    let stack = |f: &dyn Fn(&SynthExample) -> &Raster| -> Result<Tensor> {
        let ts = synth.iter().map(|s| f(s).to_tensor(dt)).collect::<Result<Vec<_>>>()?;
        Ok(Tensor::stack(&ts, 0)?)
    };
    let target_pixels = stack(&|s| &s.target)?;
    Ok(RenderBatch {
        target: model.codec.encode(&target_pixels)?,
        glyph: model.codec.encode(&stack(&|s| &s.glyph)?)?,
        product: model.codec.encode(&stack(&|s| &s.product)?)?,
        target_pixels,
        backgrounds: examples.iter().map(|e| e.design.background).collect(),
    })
}

/// Loss for a batch at given times `t` (`[B]`) and noise (`[B, N, D]`).
pub fn batch_loss(model: &RendererModel, extractor: &PerceptualExtractor, batch: &RenderBatch, t: &Tensor, eps: &Tensor, lambda: f64) -> Result<RenderLoss> {
    let noisy = flow_interpolate_batch(&batch.target, eps, t)?;
    let v_gt = target_velocity(&batch.target, eps)?;
    let v_pred = model.velocity(&noisy, &batch.glyph, &batch.product, &batch.backgrounds, t)?;
    let i_pred = if lambda == 0.0 { batch.target_pixels.clone() } else { one_step_reconstruction(&model.codec, &noisy, &v_pred, t)? };
    render_loss(&v_pred, &v_gt, &i_pred, &batch.target_pixels, extractor, lambda)
}

pub fn train_renderer(model: &mut RendererModel, data: &[RenderExample], cfg: &RenderTrainConfig) -> Result<RenderTrainReport> {
    if data.is_empty() {
        return Err(Error::invalid("empty renderer training set"));
    }
    let extractor = PerceptualExtractor::new(model.config.extractor_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trainer = Trainer::new(model.params.vars(), cfg.lr, cfg.clip)?;
    let (n, d) = (model.codec.num_tokens(), model.codec.latent_dim());
    let dt = model.dtype();
    let mut report = RenderTrainReport::default();
    let mut order: Vec<usize> = Vec::new();
    for step in 0..cfg.steps {
        if order.len() < cfg.batch_size {
            let mut fresh: Vec<usize> = (0..data.len()).collect();
            rand::seq::SliceRandom::shuffle(fresh.as_mut_slice(), &mut rng);
            order.extend(fresh);
        }
        let picked: Vec<&RenderExample> = order.drain(..cfg.batch_size.min(order.len())).map(|i| &data[i]).collect();
        let b = picked.len();
        let batch = make_batch(model, &picked)?;
        let t: Vec<f32> = (0..b).map(|_| rng.random::<f32>()).collect();
        let t = Tensor::from_vec(t, b, &Device::Cpu)?.to_dtype(dt)?;
        let eps: Vec<f32> = (0..b * n * d).map(|_| rng.sample(StandardNormal)).collect();
        let eps = Tensor::from_vec(eps, (b, n, d), &Device::Cpu)?.to_dtype(dt)?;
        let lr = nn::cosine_lr(cfg.lr, step, cfg.steps, cfg.warmup, 0.05);
        trainer.set_lr(lr);
        let loss = batch_loss(model, &extractor, &batch, &t, &eps, cfg.lambda)?;
        let value = nn::scalar(&loss.total)?;
        if !value.is_finite() {
            return Err(Error::Diverged { step, lr, message: format!("render loss {value}") });
        }
        trainer.step(&loss.total).map_err(|e| match e {
            Error::Diverged { message, .. } => Error::Diverged { step, lr, message },
            other => other,
        })?;
        report.loss.push(value);
        report.velocity_mse.push(nn::scalar(&loss.velocity_mse)?);
        report.feature_mse.push(match &loss.feature_mse {
            Some(f) => nn::scalar(f)?,
            None => f64::NAN,
        });
        if cfg.log_every > 0 && (step + 1) % cfg.log_every == 0 {
            let k = cfg.log_every;
            let recent = |v: &[f64]| v[v.len() - k..].iter().sum::<f64>() / k as f64;
            log::info!("render step {}: loss {:.5} velocity {:.5}", step + 1, recent(&report.loss), recent(&report.velocity_mse));
            if let Some(dir) = &cfg.checkpoint_dir {
                std::fs::create_dir_all(dir)?;
                model.save(&dir.join("renderer_latest.ckpt"))?;
            }
        }
    }
    Ok(report)
}

/// Noise tensor `[B, N, D]` from a seeded stream, for reproducible loss evaluation.
pub fn noise_like(b: usize, n: usize, d: usize, seed: u64, dtype: DType) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f32> = (0..b * n * d).map(|_| rng.sample(StandardNormal)).collect();
    Ok(Tensor::from_vec(v, (b, n, d), &Device::Cpu)?.to_dtype(dtype)?)
}
