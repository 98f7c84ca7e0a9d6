//! Glyph rasters: selected texts drawn white-on-black at their text boxes.

use super::font::{bitmap, ADVANCE, GLYPH_H};
use super::raster::Raster;
use crate::design::types::{validate_text, BBox, Layout};
use crate::error::{Error, Result};

/// Where a string of `chars` characters lands inside a box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    pub scale: usize,
    pub x: usize,
    pub y: usize,
}

/// Largest integer scale fitting `chars` characters in the pixel rectangle,
/// centered; `None` if even scale 1 does not fit.
pub fn fit_text(chars: usize, rect: (usize, usize, usize, usize)) -> Option<Placement> {
    let (x0, y0, x1, y1) = rect;
    let (w, h) = (x1.saturating_sub(x0), y1.saturating_sub(y0));
    let fw = ADVANCE * chars - 1;
    let scale = (w / fw).min(h / GLYPH_H);
    if chars == 0 || scale == 0 {
        return None;
    }
    Some(Placement { scale, x: x0 + (w - scale * fw) / 2, y: y0 + (h - scale * GLYPH_H) / 2 })
}

/// Draws `text` into `raster` with `color`.
pub fn draw_text(raster: &mut Raster, text: &str, placement: Placement, color: [f32; 3]) {
    let s = placement.scale;
    for (k, c) in text.bytes().enumerate() {
        let bm = bitmap(c).expect("validated text");
        for (r, row) in bm.iter().enumerate() {
            for (col, &on) in row.iter().enumerate() {
                if !on {
                    continue;
                }
                let px = placement.x + (k * ADVANCE + col) * s;
                let py = placement.y + r * s;
                for dy in 0..s {
                    for dx in 0..s {
                        raster.set(px + dx, py + dy, color);
                    }
                }
            }
        }
    }
}

pub fn text_placement(text: &str, b: &BBox, canvas: usize) -> Result<Placement> {
    fit_text(text.len(), b.pixel_rect(canvas)).ok_or_else(|| {
        Error::LayoutTooSmall(format!("{text:?} does not fit box {:?} on a {canvas}px canvas", b.bins))
    })
}

/// White 5x7 glyphs on black, one string per text box in layout order.
pub fn render_glyph_image(texts: &[&str], layout: &Layout, canvas: usize) -> Result<Raster> {
    let boxes: Vec<&BBox> = layout.text_boxes().collect();
    if boxes.len() != texts.len() {
        return Err(Error::invalid(format!("{} texts for {} text boxes", texts.len(), boxes.len())));
    }
    let mut r = Raster::black(canvas);
    for (t, b) in texts.iter().zip(boxes) {
        validate_text(t)?;
        let p = text_placement(t, b, canvas)?;
        draw_text(&mut r, t, p, [1.0; 3]);
    }
    Ok(r)
}
