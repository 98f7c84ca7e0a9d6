//! Frozen convolutional feature map used by the perceptual loss term.

use candle_core::{Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;

/// Two 3x3 convolutions (the second strided) with ReLU, seed-initialized
/// and never trained.
#[derive(Debug, Clone)]
pub struct PerceptualExtractor {
    seed: u64,
    conv1: Vec<f64>,
    conv2: Vec<f64>,
}

const C1: usize = 8;
const C2: usize = 16;

impl PerceptualExtractor {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut he = |fan_in: usize, n: usize| -> Vec<f64> {
            let std = (2.0 / fan_in as f64).sqrt();
            (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
        };
        let conv1 = he(3 * 9, C1 * 3 * 9);
        let conv2 = he(C1 * 9, C2 * C1 * 9);
        Self { seed, conv1, conv2 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Features `[B, 16, H/2, W/2]` for pixels `[B, H, W, 3]`; differentiable
    /// with respect to the input.
    pub fn features(&self, pixels: &Tensor) -> Result<Tensor> {
        let dt = pixels.dtype();
        let w1 = Tensor::from_slice(&self.conv1, (C1, 3, 3, 3), &Device::Cpu)?.to_dtype(dt)?;
        let w2 = Tensor::from_slice(&self.conv2, (C2, C1, 3, 3), &Device::Cpu)?.to_dtype(dt)?;
        let x = pixels.permute((0, 3, 1, 2))?.contiguous()?;
        let h = x.conv2d(&w1, 1, 1, 1, 1)?.relu()?;
        Ok(h.conv2d(&w2, 1, 2, 1, 1)?.relu()?)
    }

    /// Mean squared feature distance per example, `[B]`.
    pub fn distance(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let d = (self.features(a)? - self.features(b)?)?.sqr()?;
        let bsz = d.dim(0)?;
        Ok(d.reshape((bsz, ()))?.mean(1)?)
    }
}
