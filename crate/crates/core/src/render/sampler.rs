//! Uniform-step Euler integration of the learned velocity field.

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::compose::{place_product, SynthExample};
use super::glyph::render_glyph_image;
use super::model::RendererModel;
use super::raster::Raster;
use crate::design::types::{Background, Design};
use crate::error::{Error, Result};

/// Standard-normal tokens `[N, D]` from a seed.
pub fn seeded_noise(n: usize, d: usize, seed: u64, dtype: DType) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f32> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
    Ok(Tensor::from_vec(v, (n, d), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Conditions for one poster: background plus glyph and product rasters.
pub struct PosterConditions {
    pub background: Background,
    pub glyph: Raster,
    pub product: Raster,
}

impl PosterConditions {
    pub fn from_design(design: &Design, texts: &[&str], sprite: &Raster, canvas: usize) -> Result<Self> {
        design.validate(None)?;
        Ok(Self {
            background: design.background,
            glyph: render_glyph_image(texts, &design.layout, canvas)?,
            product: place_product(sprite, &design.layout, canvas)?,
        })
    }

    pub fn from_example(background: Background, ex: &SynthExample) -> Self {
        Self { background, glyph: ex.glyph.clone(), product: ex.product.clone() }
    }
}

/// Integrates from pure noise (`t = 1`) to `t = 0` in `steps` equal Euler
/// steps for a batch of posters; `seeds[i]` fixes the noise of poster `i`.
pub fn sample_posters(model: &RendererModel, conds: &[PosterConditions], steps: usize, seeds: &[u64]) -> Result<Vec<Raster>> {
    if steps < 1 {
        return Err(Error::invalid("at least one sampling step is required"));
    }
    if conds.len() != seeds.len() {
        return Err(Error::invalid("one seed per poster is required"));
    }
    if conds.is_empty() {
        return Ok(Vec::new());
    }
    let dt = model.dtype();
    let codec = &model.codec;
    let (n, d) = (codec.num_tokens(), codec.latent_dim());
    let stack = |f: &dyn Fn(&PosterConditions) -> &Raster| -> Result<Tensor> {
        let ts = conds.iter().map(|c| f(c).to_tensor(dt)).collect::<Result<Vec<_>>>()?;
        codec.encode(&Tensor::stack(&ts, 0)?)
    };
    let glyph = stack(&|c| &c.glyph)?;
    let product = stack(&|c| &c.product)?;
    let bgs: Vec<Background> = conds.iter().map(|c| c.background).collect();
    let noise = seeds.iter().map(|&s| seeded_noise(n, d, s, dt)).collect::<Result<Vec<_>>>()?;
    let mut x = Tensor::stack(&noise, 0)?;
    let h = 1.0 / steps as f64;
    for k in 0..steps {
        let t = 1.0 - k as f64 * h;
        let tt = Tensor::full(t, conds.len(), &Device::Cpu)?.to_dtype(dt)?;
        let v = model.velocity(&x, &glyph, &product, &bgs, &tt)?;
        x = (x - (v * h)?)?;
    }
    let images = codec.decode(&x)?;
    (0..conds.len()).map(|i| Ok(Raster::from_tensor(&images.get(i)?)?.clamp())).collect()
}

pub fn sample_poster(model: &RendererModel, cond: &PosterConditions, steps: usize, seed: u64) -> Result<Raster> {
    Ok(sample_posters(model, std::slice::from_ref(cond), steps, &[seed])?.remove(0))
}
