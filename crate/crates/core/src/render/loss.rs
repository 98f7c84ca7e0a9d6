//! Velocity regression plus the perceptual term on one-step reconstructions.

use candle_core::Tensor;

use super::codec::TokenCodec;
use super::extractor::PerceptualExtractor;
use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 0.1;

pub struct RenderLoss {
    pub total: Tensor,
    pub velocity_mse: Tensor,
    /// `None` when the perceptual weight is zero.
    pub feature_mse: Option<Tensor>,
}

/// `mean((v_pred - v_gt)^2) + lambda * mean((f(I_pred) - f(I_target))^2)`.
///
/// Images are `[B, H, W, 3]`; velocities share any common shape.
pub fn render_loss(v_pred: &Tensor, v_gt: &Tensor, i_pred: &Tensor, i_target: &Tensor, extractor: &PerceptualExtractor, lambda: f64) -> Result<RenderLoss> {
    if v_pred.dims() != v_gt.dims() {
        return Err(Error::invalid(format!("velocity shapes {:?} vs {:?}", v_pred.dims(), v_gt.dims())));
    }
    if i_pred.dims() != i_target.dims() {
        return Err(Error::invalid(format!("image shapes {:?} vs {:?}", i_pred.dims(), i_target.dims())));
    }
    let velocity_mse = (v_pred - v_gt)?.sqr()?.mean_all()?;
    if lambda == 0.0 {
        return Ok(RenderLoss { total: velocity_mse.clone(), velocity_mse, feature_mse: None });
    }
    let target_features = extractor.features(i_target)?.detach();
    let feature_mse = (extractor.features(i_pred)? - target_features)?.sqr()?.mean_all()?;
    let total = (&velocity_mse + (&feature_mse * lambda)?)?;
    Ok(RenderLoss { total, velocity_mse, feature_mse: Some(feature_mse) })
}

/// `decode(C_noise - t * v_pred)`, the image implied by one Euler step to
/// `t = 0`. `t` has shape `[B]`.
pub fn one_step_reconstruction(codec: &TokenCodec, noise: &Tensor, v_pred: &Tensor, t: &Tensor) -> Result<Tensor> {
    let t = t.reshape((t.dim(0)?, 1, 1))?;
    codec.decode(&(noise - v_pred.broadcast_mul(&t)?)?)
}
