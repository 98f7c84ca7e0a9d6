//! Small tensor building blocks shared by the design policy and the renderer.
//!
//! Parameters are initialized from a ChaCha stream so that a seed fully
//! determines a model regardless of the tensor backend's own RNG.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var, D};
use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PSTRKIT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal with the given standard deviation.
    Normal(f64),
    /// Normal scaled by `1/sqrt(fan_in)` for a `[fan_in, fan_out]` matrix.
    FanIn,
}

/// Named trainable parameters, ordered by name.
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self { vars: BTreeMap::new(), dtype, device: Device::Cpu, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Normal(std) => (0..n).map(|_| std * self.rng.sample::<f64, _>(StandardNormal)).collect(),
            Init::FanIn => {
                let std = 1.0 / (shape[0] as f64).sqrt();
                (0..n).map(|_| std * self.rng.sample::<f64, _>(StandardNormal)).collect()
            }
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        if self.vars.insert(name.to_string(), var).is_some() {
            return Err(Error::invalid(format!("parameter {name} registered twice")));
        }
        Ok(out)
    }

    pub fn get(&self, name: &str) -> Result<Tensor> {
        self.vars
            .get(name)
            .map(|v| v.as_tensor().clone())
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn named_vars(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn num_params(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Deep copy with fresh storage; the copy is unaffected by later updates.
    pub fn deep_clone(&self) -> Result<Self> {
        let mut vars = BTreeMap::new();
        for (k, v) in &self.vars {
            vars.insert(k.clone(), Var::from_tensor(&v.as_tensor().copy()?)?);
        }
        Ok(Self { vars, dtype: self.dtype, device: self.device.clone(), rng: self.rng.clone() })
    }

    /// Same parameters converted to another dtype.
    pub fn to_dtype(&self, dtype: DType) -> Result<Self> {
        let mut vars = BTreeMap::new();
        for (k, v) in &self.vars {
            vars.insert(k.clone(), Var::from_tensor(&v.as_tensor().to_dtype(dtype)?)?);
        }
        Ok(Self { vars, dtype, device: self.device.clone(), rng: self.rng.clone() })
    }

    pub fn flat_values(&self) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for v in self.vars.values() {
            out.extend(v.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?);
        }
        Ok(out)
    }

    pub fn set(&self, name: &str, values: &Tensor) -> Result<()> {
        let var = self.vars.get(name).ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))?;
        var.set(&values.to_dtype(self.dtype)?)?;
        Ok(())
    }

    /// Writes a versioned blob: magic, version, JSON config header, tensors.
    pub fn save<C: Serialize>(&self, path: &Path, kind: &str, config: &C) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header = serde_json::to_vec(&serde_json::json!({ "kind": kind, "config": config }))?;
        f.write_all(CHECKPOINT_MAGIC)?;
        f.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        f.write_all(&(header.len() as u32).to_le_bytes())?;
        f.write_all(&header)?;
        f.write_all(&(self.vars.len() as u32).to_le_bytes())?;
        for (name, var) in &self.vars {
            let t = var.as_tensor();
            f.write_all(&(name.len() as u32).to_le_bytes())?;
            f.write_all(name.as_bytes())?;
            f.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &d in t.dims() {
                f.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()? {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        f.flush()?;
        Ok(())
    }

    /// Reads a blob written by [`ParamStore::save`], returning the config header.
    pub fn load<C: DeserializeOwned>(path: &Path, kind: &str, dtype: DType) -> Result<(Self, C)> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
        }
        let version = read_u32(&mut f)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let hlen = read_u32(&mut f)? as usize;
        let mut header = vec![0u8; hlen];
        f.read_exact(&mut header)?;
        let header: serde_json::Value = serde_json::from_slice(&header)?;
        if header["kind"] != kind {
            return Err(Error::Checkpoint(format!("expected a {kind} checkpoint, found {}", header["kind"])));
        }
        let config: C = serde_json::from_value(header["config"].clone())?;
        let mut store = ParamStore::new(dtype, 0);
        let n = read_u32(&mut f)?;
        for _ in 0..n {
            let len = read_u32(&mut f)? as usize;
            let mut name = vec![0u8; len];
            f.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
            let rank = read_u32(&mut f)? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                f.read_exact(&mut b)?;
                dims.push(u64::from_le_bytes(b) as usize);
            }
            let count: usize = dims.iter().product();
            let mut values = Vec::with_capacity(count);
            let mut b = [0u8; 8];
            for _ in 0..count {
                f.read_exact(&mut b)?;
                values.push(f64::from_le_bytes(b));
            }
            let t = Tensor::from_vec(values, dims, &Device::Cpu)?.to_dtype(dtype)?;
            store.vars.insert(name, Var::from_tensor(&t)?);
        }
        Ok((store, config))
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// `x @ w + b` over the last dimension for inputs of any rank.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let dims = x.dims().to_vec();
    let last = *dims.last().ok_or_else(|| Error::invalid("linear on a scalar"))?;
    let rows = x.elem_count() / last.max(1);
    let out_dim = w.dim(1)?;
    let y = x.reshape((rows, last))?.matmul(w)?;
    let y = match b {
        Some(b) => y.broadcast_add(b)?,
        None => y,
    };
    let mut out_dims = dims;
    *out_dims.last_mut().unwrap() = out_dim;
    Ok(y.reshape(out_dims)?)
}

/// Layer normalization over the last dimension without affine parameters.
pub fn layer_norm(x: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    Ok(centered.broadcast_div(&(var + eps)?.sqrt()?)?)
}

pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

pub fn log_softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

/// Multi-head scaled dot-product attention.
///
/// `q`: `[B, Tq, d]`, `k`/`v`: `[B, Tk, d]`; `mask` is additive, broadcastable
/// to `[B, heads, Tq, Tk]`.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize, mask: Option<&Tensor>) -> Result<Tensor> {
    let (b, tq, d) = q.dims3()?;
    let tk = k.dim(1)?;
    if d % heads != 0 {
        return Err(Error::invalid(format!("width {d} not divisible by {heads} heads")));
    }
    let dh = d / heads;
    let split = |x: &Tensor, t: usize| -> Result<Tensor> {
        Ok(x.reshape((b, t, heads, dh))?.transpose(1, 2)?.contiguous()?)
    };
    let (qh, kh, vh) = (split(q, tq)?, split(k, tk)?, split(v, tk)?);
    let scores = (qh.matmul(&kh.t()?.contiguous()?)? / (dh as f64).sqrt())?;
    let scores = match mask {
        Some(m) => scores.broadcast_add(m)?,
        None => scores,
    };
    let probs = softmax_last(&scores)?;
    let ctx = probs.matmul(&vh)?;
    Ok(ctx.transpose(1, 2)?.contiguous()?.reshape((b, tq, d))?)
}

/// Rotary tables `(cos, sin)`, each `[T, dh]`, for 2-D grid positions.
/// The first half of every head is rotated by row, the second by column;
/// `None` positions are left unrotated.
pub fn rope_2d(positions: &[Option<(usize, usize)>], dh: usize, base: f64, dtype: DType, device: &Device) -> Result<(Tensor, Tensor)> {
    if dh % 4 != 0 {
        return Err(Error::invalid(format!("head width {dh} not divisible by 4")));
    }
    let q = dh / 4;
    let t = positions.len();
    let (mut cos, mut sin) = (vec![1f64; t * dh], vec![0f64; t * dh]);
    for (i, p) in positions.iter().enumerate() {
        let Some((r, c)) = *p else { continue };
        for (half, pos) in [(0, r), (1, c)] {
            for j in 0..q {
                let a = pos as f64 * base.powf(-(j as f64) / q as f64);
                for k in [half * 2 * q + j, half * 2 * q + q + j] {
                    cos[i * dh + k] = a.cos();
                    sin[i * dh + k] = a.sin();
                }
            }
        }
    }
    let cos = Tensor::from_vec(cos, (t, dh), device)?.to_dtype(dtype)?;
    let sin = Tensor::from_vec(sin, (t, dh), device)?.to_dtype(dtype)?;
    Ok((cos, sin))
}

/// Applies rotary tables from [`rope_2d`] to `x` (`[B, T, heads * dh]`).
pub fn apply_rope(x: &Tensor, cos: &Tensor, sin: &Tensor, heads: usize) -> Result<Tensor> {
    let (b, t, d) = x.dims3()?;
    let dh = d / heads;
    let q = dh / 4;
    let xh = x.reshape((b, t, heads, dh))?;
    let part = |k: usize| xh.narrow(D::Minus1, k * q, q);
    let rotated = Tensor::cat(&[&part(1)?.neg()?, &part(0)?, &part(3)?.neg()?, &part(2)?], D::Minus1)?;
    let (cos, sin) = (cos.unsqueeze(1)?, sin.unsqueeze(1)?);
    let out = (xh.broadcast_mul(&cos)? + rotated.broadcast_mul(&sin)?)?;
    Ok(out.reshape((b, t, d))?)
}

/// Additive causal mask `[T, T]` with large negative values above the diagonal.
pub fn causal_mask(t: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut m = vec![0f64; t * t];
    for i in 0..t {
        for j in i + 1..t {
            m[i * t + j] = -1e9;
        }
    }
    Ok(Tensor::from_vec(m, (t, t), device)?.to_dtype(dtype)?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Adam with optional global-norm gradient clipping.
pub struct Trainer {
    opt: AdamW,
    vars: Vec<Var>,
    clip: Option<f64>,
}

impl Trainer {
    pub fn new(vars: Vec<Var>, lr: f64, clip: Option<f64>) -> Result<Self> {
        let params = ParamsAdamW { lr, weight_decay: 0.0, ..Default::default() };
        let opt = AdamW::new(vars.clone(), params)?;
        Ok(Self { opt, vars, clip })
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.opt.set_learning_rate(lr);
    }

    pub fn lr(&self) -> f64 {
        self.opt.learning_rate()
    }

    /// Backpropagates `loss` and applies one update; returns the gradient norm.
    pub fn step(&mut self, loss: &Tensor) -> Result<f64> {
        let mut grads = loss.backward()?;
        let mut sq = 0f64;
        for v in &self.vars {
            if let Some(g) = grads.get(v.as_tensor()) {
                sq += scalar(&g.sqr()?.sum_all()?)?;
            }
        }
        let norm = sq.sqrt();
        if !norm.is_finite() {
            return Err(Error::Diverged { step: 0, lr: self.lr(), message: "non-finite gradient".into() });
        }
        if let Some(c) = self.clip {
            if norm > c {
                let scale = c / norm;
                for v in &self.vars {
                    if let Some(g) = grads.remove(v.as_tensor()) {
                        grads.insert(v.as_tensor(), (g * scale)?);
                    }
                }
            }
        }
        self.opt.step(&grads)?;
        Ok(norm)
    }
}

/// Cosine decay from `base` to `base * floor` after a linear warmup.
pub fn cosine_lr(base: f64, step: usize, total: usize, warmup: usize, floor: f64) -> f64 {
    if step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1);
    let p = ((step - warmup) as f64 / span as f64).min(1.0);
    base * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * p).cos()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_error: f64,
}

/// Compares autograd gradients of `loss` against central differences with
/// step `h`, on the `per_var` largest-gradient entries of every parameter.
/// Relative error is `|a - n| / max(|a|, |n|, floor)`. Meant for f64 stores.
pub fn gradient_check(params: &ParamStore, loss: impl Fn() -> Result<Tensor>, per_var: usize, h: f64, floor: f64) -> Result<GradCheck> {
    let grads = loss()?.backward()?;
    let mut report = GradCheck { checked: 0, max_rel_error: 0.0 };
    for (name, var) in params.named_vars() {
        let Some(g) = grads.get(var.as_tensor()) else { continue };
        let g = g.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        let original = var.as_tensor().copy()?;
        let shape = original.shape().clone();
        let base = original.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        let mut idx: Vec<usize> = (0..g.len()).collect();
        idx.sort_by(|&a, &b| g[b].abs().total_cmp(&g[a].abs()));
        for &i in idx.iter().take(per_var) {
            let eval = |delta: f64| -> Result<f64> {
                let mut v = base.clone();
                v[i] += delta;
                params.set(name, &Tensor::from_vec(v, shape.clone(), params.device())?)?;
                scalar(&loss()?)
            };
            let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
            let denom = g[i].abs().max(numeric.abs()).max(floor);
            report.max_rel_error = report.max_rel_error.max((g[i] - numeric).abs() / denom);
            report.checked += 1;
        }
        var.set(&original)?;
    }
    Ok(report)
}
