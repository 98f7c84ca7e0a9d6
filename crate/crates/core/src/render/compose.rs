//! Product placement, background fills and synthetic ground-truth posters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::glyph::{draw_text, render_glyph_image, text_placement};
use super::raster::Raster;
use crate::design::types::{Background, Design, ElementKind, Layout};
use crate::error::{Error, Result};

/// Background colors, all dark enough for white text to read at a 0.5
/// luminance threshold.
pub const PALETTE: [[f32; 3]; 8] = [
    [0.05, 0.08, 0.30],
    [0.35, 0.05, 0.08],
    [0.05, 0.30, 0.10],
    [0.25, 0.08, 0.35],
    [0.03, 0.25, 0.28],
    [0.30, 0.18, 0.05],
    [0.15, 0.15, 0.15],
    [0.25, 0.25, 0.03],
];

const TEXTURE_AMPLITUDE: f32 = 0.08;
const TEXTURE_PERIOD: usize = 8;

/// Text color for a background: a pale tint of the complement.
pub fn text_color(bg: Background) -> [f32; 3] {
    PALETTE[bg.color as usize].map(|c| 1.0 - 0.25 * c)
}

/// Background fill. Texture 0 is flat; 1, 2 and 3 are horizontal stripes,
/// vertical stripes and a checkerboard whose phase comes from `seed`.
pub fn background_fill(bg: Background, canvas: usize, seed: u64) -> Raster {
    let base = PALETTE[bg.color as usize];
    let mut r = Raster::filled(canvas, base);
    if bg.texture == 0 {
        return r;
    }
    let phase = ChaCha8Rng::seed_from_u64(seed).random_range(0..TEXTURE_PERIOD);
    let lighter = base.map(|c| c + TEXTURE_AMPLITUDE);
    for y in 0..canvas {
        for x in 0..canvas {
            let band = |v: usize| ((v + phase) / (TEXTURE_PERIOD / 2)) % 2 == 1;
            let on = match bg.texture {
                1 => band(y),
                2 => band(x),
                _ => band(x) ^ band(y),
            };
            if on {
                r.set(x, y, lighter);
            }
        }
    }
    r
}

/// Sprite resized by nearest neighbour into the product box; everything
/// else is exactly zero.
pub fn place_product(sprite: &Raster, layout: &Layout, canvas: usize) -> Result<Raster> {
    let products: Vec<_> = layout.boxes.iter().filter(|b| b.kind == ElementKind::Product).collect();
    if products.len() != 1 {
        return Err(Error::InvalidLayout(format!("expected one product box, found {}", products.len())));
    }
    let (x0, y0, x1, y1) = products[0].pixel_rect(canvas);
    if x1 <= x0 || y1 <= y0 {
        return Err(Error::InvalidLayout(format!("product box {:?} has zero pixel area", products[0].bins)));
    }
    let (w, h, s) = (x1 - x0, y1 - y0, sprite.size());
    let mut r = Raster::black(canvas);
    for y in y0..y1 {
        for x in x0..x1 {
            let sx = (x - x0) * s / w;
            let sy = (y - y0) * s / h;
            r.set(x, y, sprite.get(sx, sy));
        }
    }
    Ok(r)
}

/// Procedural product sprite: a bright shape on black, chosen by `id`.
pub fn make_sprite(id: usize, size: usize) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0000 + id as u64);
    let hue = |rng: &mut ChaCha8Rng| [rng.random_range(0.55..1.0f32), rng.random_range(0.35..1.0f32), rng.random_range(0.2..0.9f32)];
    let body = hue(&mut rng);
    let accent = hue(&mut rng);
    let shape = id % 4;
    let mut r = Raster::black(size);
    let c = (size as f32 - 1.0) / 2.0;
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = ((x as f32 - c) / c, (y as f32 - c) / c);
            let inside = match shape {
                0 => dx * dx + dy * dy <= 0.85,
                1 => dx.abs() <= 0.45 && dy.abs() <= 0.9,
                2 => dx.abs() + dy.abs() <= 0.95,
                _ => dx.abs() <= 0.8 && dy.abs() <= 0.6,
            };
            if inside {
                let stripe = ((y * 4) / size) % 2 == 1 && id % 3 != 0;
                r.set(x, y, if stripe { accent } else { body });
            }
        }
    }
    r
}

/// Ground-truth poster plus its two condition rasters.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthExample {
    pub target: Raster,
    pub glyph: Raster,
    pub product: Raster,
}

/// Composites background, product (non-black sprite pixels) and text in
/// that order. Deterministic in `(design, sprite, seed)`.
pub fn synthesize_example(design: &Design, texts: &[&str], sprite: &Raster, canvas: usize, seed: u64) -> Result<SynthExample> {
    design.validate(None)?;
    let glyph = render_glyph_image(texts, &design.layout, canvas)?;
    let product = place_product(sprite, &design.layout, canvas)?;
    let mut target = background_fill(design.background, canvas, seed);
    for y in 0..canvas {
        for x in 0..canvas {
            let p = product.get(x, y);
            if p.iter().any(|&v| v > 0.0) {
                target.set(x, y, p);
            }
        }
    }
    let color = text_color(design.background);
    for (t, b) in texts.iter().zip(design.layout.text_boxes()) {
        draw_text(&mut target, t, text_placement(t, b, canvas)?, color);
    }
    Ok(SynthExample { target, glyph, product })
}
