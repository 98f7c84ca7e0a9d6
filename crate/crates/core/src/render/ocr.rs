//! Template-matching recognizer for the bitmap font.
//!
//! Detection is out of scope: each text box of the layout is read by trying
//! every character count the box can hold, decoding the cells of that grid
//! against the font and keeping the reading whose re-rendering disagrees
//! with the observed ink in the fewest pixels.

use super::font::{nearest_char, Bitmap, ADVANCE, GLYPH_H, GLYPH_W};
use super::glyph::{draw_text, fit_text};
use super::raster::Raster;
use crate::design::types::{Layout, MAX_TEXT_LEN};

pub const UNREADABLE: &str = "\u{25A1}";

const INK_THRESHOLD: f32 = 0.5;

/// Reads every text box of `layout` in order.
pub fn toy_ocr(r: &Raster, layout: &Layout) -> Vec<String> {
    layout.text_boxes().map(|b| read_box(r, b.pixel_rect(r.size()))).collect()
}

pub fn read_box(r: &Raster, rect: (usize, usize, usize, usize)) -> String {
    let (x0, y0, x1, y1) = rect;
    let (x1, y1) = (x1.min(r.size()), y1.min(r.size()));
    if fit_text(1, (x0, y0, x1, y1)).is_none() {
        return UNREADABLE.to_string();
    }
    let ink = |x: usize, y: usize| r.luminance(x, y) >= INK_THRESHOLD;
    if !(y0..y1).any(|y| (x0..x1).any(|x| ink(x, y))) {
        return String::new();
    }
    let mut best: Option<(usize, String)> = None;
    for n in 1..=MAX_TEXT_LEN {
        let Some(p) = fit_text(n, (x0, y0, x1, y1)) else { break };
        let s = p.scale;
        let text: String = (0..n)
            .map(|k| {
                let mut cell: Bitmap = [[false; GLYPH_W]; GLYPH_H];
                for (row, line) in cell.iter_mut().enumerate() {
                    for (col, v) in line.iter_mut().enumerate() {
                        let (px, py) = (p.x + (k * ADVANCE + col) * s, p.y + row * s);
                        let mut sum = 0f32;
                        for dy in 0..s {
                            for dx in 0..s {
                                sum += r.luminance(px + dx, py + dy);
                            }
                        }
                        *v = sum / (s * s) as f32 >= INK_THRESHOLD;
                    }
                }
                nearest_char(&cell) as char
            })
            .collect();
        let mut rendered = Raster::black(r.size());
        draw_text(&mut rendered, &text, p, [1.0; 3]);
        let mismatch = (y0..y1).flat_map(|y| (x0..x1).map(move |x| (x, y))).filter(|&(x, y)| ink(x, y) != (rendered.get(x, y)[0] > 0.5)).count();
        if best.as_ref().is_none_or(|(m, _)| mismatch < *m) {
            best = Some((mismatch, text));
        }
    }
    best.map(|(_, t)| t.trim().to_string()).unwrap_or_default()
}
