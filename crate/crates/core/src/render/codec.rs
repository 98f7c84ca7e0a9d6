//! Invertible patch tokenizer standing in for the image autoencoder.
//!
//! A raster is cut into non-overlapping `p x p` patches, each flattened to
//! `3 p^2` values, affinely normalized and rotated by a fixed orthogonal
//! matrix. Decoding applies the transpose, so the two maps are exact
//! inverses up to floating-point rounding.

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::raster::Raster;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecConfig {
    pub canvas: usize,
    pub patch: usize,
    /// Pixels are mapped through `scale * (x - offset)` before rotation.
    pub offset: f64,
    pub scale: f64,
    pub seed: u64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self { canvas: 64, patch: 8, offset: 0.5, scale: 2.0, seed: 17 }
    }
}

#[derive(Debug, Clone)]
pub struct TokenCodec {
    pub config: CodecConfig,
    rotation: Vec<f64>,
}

/// Seeded random orthogonal `n x n` matrix (row-major) via Gram-Schmidt.
pub fn random_orthogonal(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for r in &rows {
                let dot: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(r).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            rows.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    rows.concat()
}

impl TokenCodec {
    pub fn new(config: CodecConfig) -> Result<Self> {
        if config.patch == 0 || config.canvas % config.patch != 0 {
            return Err(Error::invalid(format!("canvas {} not divisible by patch {}", config.canvas, config.patch)));
        }
        if config.scale == 0.0 {
            return Err(Error::invalid("codec scale must be non-zero"));
        }
        let d = 3 * config.patch * config.patch;
        let rotation = random_orthogonal(d, config.seed);
        Ok(Self { config, rotation })
    }

    /// Token width `3 p^2`.
    pub fn latent_dim(&self) -> usize {
        3 * self.config.patch * self.config.patch
    }

    /// Tokens per raster `(canvas / p)^2`.
    pub fn num_tokens(&self) -> usize {
        let g = self.config.canvas / self.config.patch;
        g * g
    }

    fn rotation(&self, dtype: DType) -> Result<Tensor> {
        let d = self.latent_dim();
        Ok(Tensor::from_slice(&self.rotation, (d, d), &Device::Cpu)?.to_dtype(dtype)?)
    }

    /// `[B, H, W, 3]` pixels to `[B, N, D]` tokens.
    pub fn encode(&self, pixels: &Tensor) -> Result<Tensor> {
        let (b, h, w, c) = pixels.dims4()?;
        let (s, p) = (self.config.canvas, self.config.patch);
        if h != s || w != s || c != 3 {
            return Err(Error::invalid(format!("raster of shape {:?}, codec expects {s}x{s}x3", pixels.dims())));
        }
        let g = s / p;
        let patches = pixels
            .reshape(vec![b, g, p, g, p, 3])?
            .permute(vec![0, 1, 3, 2, 4, 5])?
            .contiguous()?
            .reshape((b, g * g, 3 * p * p))?;
        let normed = ((patches - self.config.offset)? * self.config.scale)?;
        crate::nn::linear(&normed, &self.rotation(pixels.dtype())?.t()?, None)
    }

    /// Inverse of [`TokenCodec::encode`]; differentiable.
    pub fn decode(&self, tokens: &Tensor) -> Result<Tensor> {
        let (b, n, d) = tokens.dims3()?;
        if n != self.num_tokens() || d != self.latent_dim() {
            return Err(Error::invalid(format!("tokens of shape {:?} do not match the codec", tokens.dims())));
        }
        let (s, p) = (self.config.canvas, self.config.patch);
        let g = s / p;
        let patches = crate::nn::linear(tokens, &self.rotation(tokens.dtype())?, None)?;
        let patches = ((patches / self.config.scale)? + self.config.offset)?;
        Ok(patches
            .reshape(vec![b, g, g, p, p, 3])?
            .permute(vec![0, 1, 3, 2, 4, 5])?
            .contiguous()?
            .reshape((b, s, s, 3))?)
    }

    pub fn encode_raster(&self, r: &Raster, dtype: DType) -> Result<Tensor> {
        Ok(self.encode(&r.to_tensor(dtype)?.unsqueeze(0)?)?.squeeze(0)?)
    }

    pub fn decode_tokens(&self, tokens: &Tensor) -> Result<Raster> {
        Raster::from_tensor(&self.decode(&tokens.unsqueeze(0)?)?.squeeze(0)?)
    }
}
