//! Synthetic products, candidate texts and designs.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::design::data::DesignExample;
use crate::design::types::{BBox, Background, CandidateTextSet, Design, ElementKind, Layout, MAX_TEXT_BOXES};
use crate::design::vocab::{NUM_BINS, NUM_COLORS, NUM_TEXTURES};
use crate::error::{Error, Result};
use crate::render::font::{ADVANCE, GLYPH_H};

/// Selling-point phrases candidate texts are drawn from.
pub const PHRASES: [&str; 24] = [
    "SALE", "HOT", "NEW", "GIFT", "FRESH", "TOP 10", "BUY 2", "50 OFF", "DEAL", "BEST", "FREE", "LIMITED", "VALUE",
    "SAVE 20", "PREMIUM", "ORGANIC", "CLASSIC", "ONLY 9", "BIG SALE", "NEW IN", "EXTRA", "PURE", "LUXE", "2 FOR 1",
];

pub const NUM_SPRITES: usize = 16;
pub const SPRITE_SIZE: usize = 32;

pub fn random_candidates<R: Rng>(rng: &mut R, min: usize, max: usize) -> CandidateTextSet {
    let n = rng.random_range(min..=max);
    let picked: Vec<&str> = PHRASES.choose_multiple(rng, n).copied().collect();
    CandidateTextSet::new(picked).expect("phrases are valid candidates")
}

fn px(bin: usize, canvas: usize) -> usize {
    (bin as f64 / (NUM_BINS - 1) as f64 * canvas as f64).round() as usize
}

/// Smallest end bin whose pixel span from `start` covers `pixels`.
fn end_bin(start: usize, pixels: usize, canvas: usize) -> Option<usize> {
    (start + 1..NUM_BINS).find(|&k| px(k, canvas) - px(start, canvas) >= pixels)
}

fn overlaps(a: (usize, usize, usize, usize), b: (usize, usize, usize, usize), gap: usize) -> bool {
    a.0 < b.2 + gap && b.0 < a.2 + gap && a.1 < b.3 + gap && b.1 < a.3 + gap
}

/// Random layout: one product box and one fitted text box per text, no
/// two boxes overlapping on the `canvas`-pixel grid.
pub fn random_layout<R: Rng>(rng: &mut R, texts: &[&str], canvas: usize) -> Result<Layout> {
    'outer: for attempt in 0..200 {
        let shrink = attempt / 40;
        let pw = rng.random_range(18..=38usize).saturating_sub(3 * shrink).max(8);
        let ph = rng.random_range(18..=38usize).saturating_sub(3 * shrink).max(8);
        let px0 = rng.random_range(0..NUM_BINS - pw);
        let py0 = rng.random_range(0..NUM_BINS - ph);
        let product = BBox::from_bins(ElementKind::Product, [px0 as u8, py0 as u8, (px0 + pw) as u8, (py0 + ph) as u8])?;
        let mut rects = vec![product.pixel_rect(canvas)];
        let mut boxes = vec![product];
        for t in texts {
            let fw = ADVANCE * t.len() - 1;
            let max_scale = if rng.random_bool(0.6) { 2 } else { 1 };
            let mut placed = false;
            for scale in (1..=max_scale).rev() {
                let (w, h) = (fw * scale + rng.random_range(0..=3), GLYPH_H * scale + rng.random_range(0..=2));
                for _ in 0..60 {
                    let x0 = rng.random_range(0..NUM_BINS - 1);
                    let y0 = rng.random_range(0..NUM_BINS - 1);
                    let (Some(x1), Some(y1)) = (end_bin(x0, w, canvas), end_bin(y0, h, canvas)) else { continue };
                    let b = BBox::from_bins(ElementKind::Text, [x0 as u8, y0 as u8, x1 as u8, y1 as u8])?;
                    let r = b.pixel_rect(canvas);
                    if rects.iter().any(|&o| overlaps(o, r, 1)) {
                        continue;
                    }
                    rects.push(r);
                    boxes.push(b);
                    placed = true;
                    break;
                }
                if placed {
                    break;
                }
            }
            if !placed {
                continue 'outer;
            }
        }
        return Ok(Layout::new(boxes));
    }
    Err(Error::LayoutTooSmall(format!("could not place {texts:?}")))
}

/// Random valid design for the candidates: background, 1-3 ascending
/// selected indices and a fitted layout.
pub fn random_design<R: Rng>(rng: &mut R, candidates: &CandidateTextSet, canvas: usize) -> Result<Design> {
    let k = rng.random_range(1..=MAX_TEXT_BOXES.min(candidates.len()));
    let mut idx: Vec<usize> = (0..candidates.len()).collect();
    idx.shuffle(rng);
    let mut selected: Vec<usize> = idx[..k].to_vec();
    selected.sort_unstable();
    let texts: Vec<&str> = selected.iter().map(|&i| candidates.texts()[i].as_str()).collect();
    let layout = random_layout(rng, &texts, canvas)?;
    let background = Background::new(rng.random_range(0..NUM_COLORS as u8), rng.random_range(0..NUM_TEXTURES as u8))?;
    let d = Design { background, selected, layout };
    d.validate(Some(candidates.len()))?;
    Ok(d)
}

/// One example per product id in `ids`.
pub fn design_examples<R: Rng>(rng: &mut R, ids: impl IntoIterator<Item = usize>, canvas: usize) -> Result<Vec<DesignExample>> {
    ids.into_iter()
        .map(|product_id| {
            let candidates = random_candidates(rng, 2, 8);
            let design = random_design(rng, &candidates, canvas)?;
            Ok(DesignExample { product_id, candidates, design })
        })
        .collect()
}
