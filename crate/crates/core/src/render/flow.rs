//! Straight-path flow interpolation between data tokens and noise.

use candle_core::Tensor;

use crate::error::{Error, Result};

/// `(1 - t) * target + t * eps`.
pub fn flow_interpolate(target: &Tensor, eps: &Tensor, t: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("flow time {t} outside [0,1]")));
    }
    if target.dims() != eps.dims() {
        return Err(Error::invalid(format!("target {:?} and noise {:?} differ in shape", target.dims(), eps.dims())));
    }
    Ok(((target * (1.0 - t))? + (eps * t)?)?)
}

/// Batched interpolation with one time per leading index; `t` has shape `[B]`.
pub fn flow_interpolate_batch(target: &Tensor, eps: &Tensor, t: &Tensor) -> Result<Tensor> {
    let shape: Vec<usize> = std::iter::once(t.dim(0)?).chain(std::iter::repeat_n(1, target.rank() - 1)).collect();
    let t = t.reshape(shape)?;
    let one_minus = t.affine(-1.0, 1.0)?;
    Ok((target.broadcast_mul(&one_minus)? + eps.broadcast_mul(&t)?)?)
}

/// Ground-truth velocity `eps - target`, the time derivative of the path.
pub fn target_velocity(target: &Tensor, eps: &Tensor) -> Result<Tensor> {
    Ok((eps - target)?)
}
