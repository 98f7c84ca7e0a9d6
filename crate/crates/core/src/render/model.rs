//! Flow-matching transformer with decomposed attention.
//!
//! Four token streams flow through every block: prompt (background
//! descriptor), noise (the latent being denoised), glyph and product
//! conditions. Glyph and product each run their own self-attention and MLP
//! and are never modulated by the timestep. Prompt and noise tokens query a
//! cross-attention whose keys and values span all four streams, so the
//! condition streams never see the noisy latent.

use candle_core::{DType, Device, Tensor, D};
use serde::{Deserialize, Serialize};

use super::codec::{CodecConfig, TokenCodec};
use crate::design::types::Background;
use crate::design::vocab::{NUM_COLORS, NUM_TEXTURES};
use crate::error::{Error, Result};
use crate::nn::{self, Init, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RendererConfig {
    pub codec: CodecConfig,
    pub width: usize,
    pub heads: usize,
    pub blocks: usize,
    pub mlp_ratio: usize,
    /// Size of the sinusoidal timestep features.
    pub time_features: usize,
    /// Zero-initialize modulation and output layers (identity blocks at start).
    pub zero_init: bool,
    pub extractor_seed: u64,
    pub seed: u64,
}

impl Default for RendererConfig {
    fn default() -> Self {
        Self {
            codec: CodecConfig::default(),
            width: 128,
            heads: 4,
            blocks: 2,
            mlp_ratio: 2,
            time_features: 64,
            zero_init: true,
            extractor_seed: 99,
            seed: 0,
        }
    }
}

/// Number of prompt tokens: one for the color, one for the texture.
pub const PROMPT_LEN: usize = 2;
const ROPE_BASE: f64 = 100.0;

/// The four hidden-state streams of a block, each `[B, len, width]`.
#[derive(Debug, Clone)]
pub struct Streams {
    pub prompt: Tensor,
    pub noise: Tensor,
    pub glyph: Tensor,
    pub product: Tensor,
}

pub struct RendererModel {
    pub config: RendererConfig,
    pub codec: TokenCodec,
    pub params: ParamStore,
}

const STREAMS: [&str; 4] = ["prompt", "noise", "glyph", "product"];

impl RendererModel {
    pub fn new(config: RendererConfig, dtype: DType) -> Result<Self> {
        let d = config.width;
        if d % config.heads != 0 {
            return Err(Error::invalid(format!("width {d} not divisible by {} heads", config.heads)));
        }
        if d % 4 != 0 || config.time_features % 2 != 0 {
            return Err(Error::invalid("width must be divisible by 4 and time features even"));
        }
        let codec = TokenCodec::new(config.codec.clone())?;
        let dl = codec.latent_dim();
        let h = d * config.mlp_ratio;
        let gate_init = if config.zero_init { Init::Zeros } else { Init::Normal(0.02) };
        let mut p = ParamStore::new(dtype, config.seed);
        p.add("prompt_table", &[NUM_COLORS + NUM_TEXTURES, dl], Init::Normal(1.0))?;
        for s in STREAMS {
            p.add(&format!("{s}_in.w"), &[dl, d], Init::FanIn)?;
            p.add(&format!("{s}_in.b"), &[d], Init::Zeros)?;
        }
        p.add("time1.w", &[config.time_features, d], Init::FanIn)?;
        p.add("time1.b", &[d], Init::Zeros)?;
        p.add("time2.w", &[d, d], Init::FanIn)?;
        p.add("time2.b", &[d], Init::Zeros)?;
        for l in 0..config.blocks {
            for s in STREAMS {
                p.add(&format!("b{l}.{s}.qkv.w"), &[d, 3 * d], Init::FanIn)?;
                p.add(&format!("b{l}.{s}.qkv.b"), &[3 * d], Init::Zeros)?;
                p.add(&format!("b{l}.{s}.out.w"), &[d, d], Init::FanIn)?;
                p.add(&format!("b{l}.{s}.out.b"), &[d], Init::Zeros)?;
                p.add(&format!("b{l}.{s}.fc1.w"), &[d, h], Init::FanIn)?;
                p.add(&format!("b{l}.{s}.fc1.b"), &[h], Init::Zeros)?;
                p.add(&format!("b{l}.{s}.fc2.w"), &[h, d], Init::FanIn)?;
                p.add(&format!("b{l}.{s}.fc2.b"), &[d], Init::Zeros)?;
            }
            for s in ["prompt", "noise"] {
                p.add(&format!("b{l}.{s}.mod.w"), &[d, 6 * d], gate_init)?;
                p.add(&format!("b{l}.{s}.mod.b"), &[6 * d], Init::Zeros)?;
            }
        }
        p.add("final_mod.w", &[d, 2 * d], gate_init)?;
        p.add("final_mod.b", &[2 * d], Init::Zeros)?;
        p.add("final.w", &[d, dl], gate_init)?;
        p.add("final.b", &[dl], Init::Zeros)?;
        // Time-dependent per-channel gain on the noisy input: the hidden width
        // can be narrower than a token, so the noise is routed around the blocks.
        p.add("skip.w", &[d, dl], gate_init)?;
        p.add("skip.b", &[dl], Init::Zeros)?;
        // Same for glyph detail: a token-wise linear read of the glyph condition.
        p.add("glyph_skip.w", &[dl, dl], Init::FanIn)?;
        p.add("glyph_skip.b", &[dl], Init::Zeros)?;
        p.add("glyph_gate.w", &[d, dl], gate_init)?;
        p.add("glyph_gate.b", &[dl], Init::Zeros)?;
        Ok(Self { config, codec, params: p })
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.params.save(path, "renderer", &self.config)
    }

    pub fn load(path: &std::path::Path, dtype: DType) -> Result<Self> {
        let (params, config): (ParamStore, RendererConfig) = ParamStore::load(path, "renderer", dtype)?;
        let codec = TokenCodec::new(config.codec.clone())?;
        Ok(Self { config, codec, params })
    }

    fn lin(&self, x: &Tensor, prefix: &str) -> Result<Tensor> {
        let w = self.params.get(&format!("{prefix}.w"))?;
        let b = self.params.get(&format!("{prefix}.b"))?;
        nn::linear(x, &w, Some(&b))
    }

    fn mlp(&self, x: &Tensor, prefix: &str) -> Result<Tensor> {
        let h = self.lin(x, &format!("{prefix}.fc1"))?.gelu_erf()?;
        self.lin(&h, &format!("{prefix}.fc2"))
    }

    /// Fixed 2-D sine/cosine position table `[N, width]` over the patch grid.
    pub fn positions(&self) -> Result<Tensor> {
        let g = self.config.codec.canvas / self.config.codec.patch;
        let d = self.config.width;
        let quarter = d / 4;
        let mut v = vec![0f64; g * g * d];
        for r in 0..g {
            for c in 0..g {
                let row = &mut v[(r * g + c) * d..(r * g + c + 1) * d];
                for k in 0..quarter {
                    let w = 1.0 / 100f64.powf(k as f64 / quarter as f64);
                    row[k] = (r as f64 * w).sin();
                    row[quarter + k] = (r as f64 * w).cos();
                    row[2 * quarter + k] = (c as f64 * w).sin();
                    row[3 * quarter + k] = (c as f64 * w).cos();
                }
            }
        }
        Ok(Tensor::from_vec(v, (g * g, d), &Device::Cpu)?.to_dtype(self.dtype())?)
    }

    /// Prompt tokens `[B, 2, D_latent]` for the background descriptors.
    pub fn prompt_tokens(&self, backgrounds: &[Background]) -> Result<Tensor> {
        let ids: Vec<u32> = backgrounds
            .iter()
            .flat_map(|b| [b.color as u32, NUM_COLORS as u32 + b.texture as u32])
            .collect();
        let ids = Tensor::from_vec(ids, backgrounds.len() * PROMPT_LEN, &Device::Cpu)?;
        let table = self.params.get("prompt_table")?;
        Ok(table.index_select(&ids, 0)?.reshape((backgrounds.len(), PROMPT_LEN, ()))?)
    }

    /// Timestep embedding `[B, width]` for times `t` of shape `[B]`.
    pub fn time_embedding(&self, t: &Tensor) -> Result<Tensor> {
        let half = self.config.time_features / 2;
        let freqs: Vec<f64> = (0..half).map(|k| (-(10000f64).ln() * k as f64 / half as f64).exp()).collect();
        let freqs = Tensor::from_vec(freqs, (1, half), &Device::Cpu)?.to_dtype(t.dtype())?;
        let args = (t.unsqueeze(1)? * 1000.0)?.broadcast_mul(&freqs)?;
        let feats = Tensor::cat(&[args.cos()?, args.sin()?], 1)?;
        let h = self.lin(&feats, "time1")?.silu()?;
        self.lin(&h, "time2")
    }

    /// Embeds token sequences into the four streams.
    pub fn embed(&self, prompt: &Tensor, noise: &Tensor, glyph: &Tensor, product: &Tensor) -> Result<Streams> {
        let pos = self.positions()?;
        let with_pos = |x: Tensor| -> Result<Tensor> {
            let n = x.dim(1)?;
            if n == pos.dim(0)? {
                Ok(x.broadcast_add(&pos)?)
            } else {
                Ok(x)
            }
        };
        Ok(Streams {
            prompt: self.lin(prompt, "prompt_in")?,
            noise: with_pos(self.lin(noise, "noise_in")?)?,
            glyph: with_pos(self.lin(glyph, "glyph_in")?)?,
            product: with_pos(self.lin(product, "product_in")?)?,
        })
    }

    fn modulation(&self, temb: &Tensor, prefix: &str, chunks: usize) -> Result<Vec<Tensor>> {
        let d = self.config.width;
        let m = self.lin(&temb.silu()?, prefix)?.unsqueeze(1)?;
        (0..chunks).map(|k| Ok(m.narrow(D::Minus1, k * d, d)?)).collect()
    }

    /// Rotary tables for `prompt` unrotated tokens followed by `grids` copies of the patch grid.
    fn rope(&self, prompt: usize, grids: usize) -> Result<(Tensor, Tensor)> {
        let g = self.config.codec.canvas / self.config.codec.patch;
        let mut pos = vec![None; prompt];
        for _ in 0..grids {
            pos.extend((0..g * g).map(|i| Some((i / g, i % g))));
        }
        nn::rope_2d(&pos, self.config.width / self.config.heads, ROPE_BASE, self.dtype(), &Device::Cpu)
    }

    fn rotate(&self, x: &Tensor, prompt: usize, grids: usize) -> Result<Tensor> {
        let (cos, sin) = self.rope(prompt, grids)?;
        nn::apply_rope(x, &cos, &sin, self.config.heads)
    }

    fn split_qkv(&self, x: &Tensor, prefix: &str) -> Result<(Tensor, Tensor, Tensor)> {
        let d = self.config.width;
        let qkv = self.lin(x, prefix)?;
        Ok((qkv.narrow(D::Minus1, 0, d)?, qkv.narrow(D::Minus1, d, d)?, qkv.narrow(D::Minus1, 2 * d, d)?))
    }

    /// Condition self-attention and MLP for one stream. Returns the updated
    /// stream and the keys/values it contributes to the cross-attention.
    fn condition_stream(&self, l: usize, name: &str, x: &Tensor) -> Result<(Tensor, Option<(Tensor, Tensor)>)> {
        if x.dim(1)? == 0 {
            return Ok((x.clone(), None));
        }
        let h = nn::layer_norm(x, 1e-6)?;
        let (q, k, v) = self.split_qkv(&h, &format!("b{l}.{name}.qkv"))?;
        let (q, k) = (self.rotate(&q, 0, 1)?, self.rotate(&k, 0, 1)?);
        let a = nn::attention(&q, &k, &v, self.config.heads, None)?;
        let x = (x + self.lin(&a, &format!("b{l}.{name}.out"))?)?;
        let x = (&x + self.mlp(&nn::layer_norm(&x, 1e-6)?, &format!("b{l}.{name}"))?)?;
        Ok((x, Some((k, v))))
    }

    /// One decomposed-attention block.
    pub fn block(&self, l: usize, s: &Streams, temb: &Tensor) -> Result<Streams> {
        let d = self.config.width;
        for t in [&s.prompt, &s.noise, &s.glyph, &s.product] {
            if t.dim(D::Minus1)? != d {
                return Err(Error::invalid(format!("stream width {} but block width {d}", t.dim(D::Minus1)?)));
            }
        }
        let m = s.prompt.dim(1)?;
        let mb = self.modulation(temb, &format!("b{l}.prompt.mod"), 6)?;
        let mx = self.modulation(temb, &format!("b{l}.noise.mod"), 6)?;
        let hb = modulate(&s.prompt, &mb[0], &mb[1])?;
        let hx = modulate(&s.noise, &mx[0], &mx[1])?;
        let (qb, kb, vb) = self.split_qkv(&hb, &format!("b{l}.prompt.qkv"))?;
        let (qx, kx, vx) = self.split_qkv(&hx, &format!("b{l}.noise.qkv"))?;
        let (glyph, kv_g) = self.condition_stream(l, "glyph", &s.glyph)?;
        let (product, kv_p) = self.condition_stream(l, "product", &s.product)?;

        let q = self.rotate(&Tensor::cat(&[&qb, &qx], 1)?, m, 1)?;
        let mut ks = vec![self.rotate(&Tensor::cat(&[&kb, &kx], 1)?, m, 1)?];
        let mut vs = vec![Tensor::cat(&[&vb, &vx], 1)?];
        for (k, v) in [kv_g, kv_p].into_iter().flatten() {
            ks.push(k);
            vs.push(v);
        }
        let o = nn::attention(&q, &Tensor::cat(&ks, 1)?, &Tensor::cat(&vs, 1)?, self.config.heads, None)?;
        let ob = o.narrow(1, 0, m)?;
        let ox = o.narrow(1, m, o.dim(1)? - m)?;

        let prompt = (&s.prompt + self.lin(&ob, &format!("b{l}.prompt.out"))?.broadcast_mul(&mb[2])?)?;
        let noise = (&s.noise + self.lin(&ox, &format!("b{l}.noise.out"))?.broadcast_mul(&mx[2])?)?;
        let prompt = (&prompt + self.mlp(&modulate(&prompt, &mb[3], &mb[4])?, &format!("b{l}.prompt"))?.broadcast_mul(&mb[5])?)?;
        let noise = (&noise + self.mlp(&modulate(&noise, &mx[3], &mx[4])?, &format!("b{l}.noise"))?.broadcast_mul(&mx[5])?)?;
        Ok(Streams { prompt, noise, glyph, product })
    }

    /// Reference block with ordinary joint attention over `[prompt; noise]`,
    /// sharing this model's parameters. Used to check the decomposed block.
    pub fn joint_block(&self, l: usize, prompt: &Tensor, noise: &Tensor, temb: &Tensor) -> Result<(Tensor, Tensor)> {
        let m = prompt.dim(1)?;
        let mb = self.modulation(temb, &format!("b{l}.prompt.mod"), 6)?;
        let mx = self.modulation(temb, &format!("b{l}.noise.mod"), 6)?;
        let joint_in = Tensor::cat(&[modulate(prompt, &mb[0], &mb[1])?, modulate(noise, &mx[0], &mx[1])?], 1)?;
        let qkv_b = self.lin(&joint_in.narrow(1, 0, m)?, &format!("b{l}.prompt.qkv"))?;
        let qkv_x = self.lin(&joint_in.narrow(1, m, noise.dim(1)?)?, &format!("b{l}.noise.qkv"))?;
        let qkv = Tensor::cat(&[qkv_b, qkv_x], 1)?;
        let d = self.config.width;
        let o = nn::attention(
            &self.rotate(&qkv.narrow(D::Minus1, 0, d)?, m, 1)?,
            &self.rotate(&qkv.narrow(D::Minus1, d, d)?, m, 1)?,
            &qkv.narrow(D::Minus1, 2 * d, d)?,
            self.config.heads,
            None,
        )?;
        let prompt = (prompt + self.lin(&o.narrow(1, 0, m)?, &format!("b{l}.prompt.out"))?.broadcast_mul(&mb[2])?)?;
        let noise = (noise + self.lin(&o.narrow(1, m, noise.dim(1)?)?, &format!("b{l}.noise.out"))?.broadcast_mul(&mx[2])?)?;
        let prompt = (&prompt + self.mlp(&modulate(&prompt, &mb[3], &mb[4])?, &format!("b{l}.prompt"))?.broadcast_mul(&mb[5])?)?;
        let noise = (&noise + self.mlp(&modulate(&noise, &mx[3], &mx[4])?, &format!("b{l}.noise"))?.broadcast_mul(&mx[5])?)?;
        Ok((prompt, noise))
    }

    /// Predicted velocity `[B, N, D_latent]` for noisy tokens at times `t` (`[B]`).
    pub fn velocity(&self, noise: &Tensor, glyph: &Tensor, product: &Tensor, backgrounds: &[Background], t: &Tensor) -> Result<Tensor> {
        let prompt = self.prompt_tokens(backgrounds)?.to_dtype(noise.dtype())?;
        let temb = self.time_embedding(t)?;
        let mut s = self.embed(&prompt, noise, glyph, product)?;
        for l in 0..self.config.blocks {
            s = self.block(l, &s, &temb)?;
        }
        let f = self.modulation(&temb, "final_mod", 2)?;
        let skip = self.lin(&temb.silu()?, "skip")?.unsqueeze(1)?;
        let gate = self.lin(&temb.silu()?, "glyph_gate")?.unsqueeze(1)?;
        let glyph_detail = self.lin(glyph, "glyph_skip")?.broadcast_mul(&gate)?;
        Ok(((self.lin(&modulate(&s.noise, &f[0], &f[1])?, "final")? + noise.broadcast_mul(&skip)?)? + glyph_detail)?)
    }
}

/// Parameter-free layer norm followed by `x * (1 + scale) + shift`.
pub fn modulate(x: &Tensor, shift: &Tensor, scale: &Tensor) -> Result<Tensor> {
    Ok(nn::layer_norm(x, 1e-6)?.broadcast_mul(&(scale + 1.0)?)?.broadcast_add(shift)?)
}
