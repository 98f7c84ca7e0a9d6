//! Square RGB rasters with values in `[0, 1]`.

use std::path::Path;

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    size: usize,
    /// Row-major `H x W x 3`.
    pixels: Vec<f32>,
}

impl Raster {
    pub fn black(size: usize) -> Self {
        Self { size, pixels: vec![0.0; size * size * 3] }
    }

    pub fn filled(size: usize, rgb: [f32; 3]) -> Self {
        let mut r = Self::black(size);
        for px in r.pixels.chunks_mut(3) {
            px.copy_from_slice(&rgb);
        }
        r
    }

    pub fn from_pixels(size: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != size * size * 3 {
            return Err(Error::invalid(format!("{} values for a {size}x{size} RGB raster", pixels.len())));
        }
        Ok(Self { size, pixels })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.size + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.size + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn luminance(&self, x: usize, y: usize) -> f32 {
        let [r, g, b] = self.get(x, y);
        0.299 * r + 0.587 * g + 0.114 * b
    }

    pub fn clamp(mut self) -> Self {
        for v in &mut self.pixels {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }

    /// `[H, W, 3]` tensor.
    pub fn to_tensor(&self, dtype: DType) -> Result<Tensor> {
        Ok(Tensor::from_slice(&self.pixels, (self.size, self.size, 3), &Device::Cpu)?.to_dtype(dtype)?)
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (h, w, c) = t.dims3()?;
        if h != w || c != 3 {
            return Err(Error::invalid(format!("tensor of shape {:?} is not a square RGB raster", t.dims())));
        }
        let pixels = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        Self::from_pixels(h, pixels)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut enc = png::Encoder::new(f, self.size as u32, self.size as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| Error::invalid(e.to_string()))?;
        let bytes: Vec<u8> = self.pixels.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        w.write_image_data(&bytes).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let dec = png::Decoder::new(std::io::BufReader::new(std::fs::File::open(path)?));
        let mut reader = dec.read_info().map_err(|e| Error::invalid(e.to_string()))?;
        let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
        let info = reader.next_frame(&mut buf).map_err(|e| Error::invalid(e.to_string()))?;
        if info.width != info.height || info.bit_depth != png::BitDepth::Eight {
            return Err(Error::invalid("expected a square 8-bit PNG"));
        }
        let channels = match info.color_type {
            png::ColorType::Rgb => 3,
            png::ColorType::Rgba => 4,
            png::ColorType::Grayscale => 1,
            other => return Err(Error::invalid(format!("unsupported PNG color type {other:?}"))),
        };
        let size = info.width as usize;
        let mut pixels = Vec::with_capacity(size * size * 3);
        for px in buf[..size * size * channels].chunks(channels) {
            for c in 0..3 {
                pixels.push(px[c.min(channels - 1)] as f32 / 255.0);
            }
        }
        Self::from_pixels(size, pixels)
    }
}
