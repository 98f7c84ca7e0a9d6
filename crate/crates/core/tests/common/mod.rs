#![allow(dead_code)]

use candle_core::DType;
use posterkit::design::{Background, BBox, CandidateTextSet, Design, DesignPolicy, ElementKind, Layout, PolicyConfig};
use posterkit::feedback::PreferencePair;
use posterkit::render::codec::CodecConfig;
use posterkit::render::model::{RendererConfig, RendererModel};
use posterkit::replacement::Element;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn tiny_policy(seed: u64, dtype: DType) -> DesignPolicy {
    let cfg = PolicyConfig { layers: 2, width: 16, heads: 2, mlp_ratio: 2, max_len: 80, num_products: 16, zero_head: false, seed };
    DesignPolicy::new(cfg, dtype).unwrap()
}

pub fn tiny_renderer(blocks: usize, seed: u64) -> RendererModel {
    let cfg = RendererConfig {
        codec: CodecConfig { canvas: 16, patch: 4, ..Default::default() },
        width: 16,
        heads: 2,
        blocks,
        time_features: 8,
        zero_init: false,
        seed,
        ..Default::default()
    };
    RendererModel::new(cfg, DType::F64).unwrap()
}

pub fn bbox(kind: ElementKind, v: [u8; 4]) -> BBox {
    BBox::from_bins(kind, v).unwrap()
}

/// A random valid box inside the 64-bin grid.
pub fn random_box<R: Rng>(rng: &mut R, kind: ElementKind) -> BBox {
    let x0 = rng.random_range(0..62u8);
    let y0 = rng.random_range(0..62u8);
    let x1 = rng.random_range(x0 + 1..=63);
    let y1 = rng.random_range(y0 + 1..=63);
    bbox(kind, [x0, y0, x1, y1])
}

/// A random valid design for `n` candidates (no fitting constraints).
pub fn random_design<R: Rng>(rng: &mut R, n: usize) -> Design {
    let k = rng.random_range(1..=n.min(3));
    let mut selected: Vec<usize> = rand::seq::index::sample(rng, n, k).into_vec();
    selected.sort_unstable();
    let mut boxes = vec![random_box(rng, ElementKind::Product)];
    for _ in 0..k {
        boxes.push(random_box(rng, ElementKind::Text));
    }
    Design {
        background: Background::new(rng.random_range(0..8), rng.random_range(0..4)).unwrap(),
        selected,
        layout: Layout::new(boxes),
    }
}

pub fn candidates(texts: &[&str]) -> CandidateTextSet {
    CandidateTextSet::new(texts.iter().copied()).unwrap()
}

/// A pair that differs only in `element`, on a fixed candidate set.
pub fn toy_pair<R: Rng>(rng: &mut R, element: Element) -> PreferencePair {
    let cands = candidates(&["SALE", "GIFT", "HOT", "NEW", "FRESH"]);
    let winner = random_design(rng, 5);
    let mut loser = winner.clone();
    match element {
        Element::Background => {
            let i = (winner.background.index() + rng.random_range(1..Background::COUNT)) % Background::COUNT;
            loser.background = Background::from_index(i);
        }
        Element::Text => {
            let k = winner.selected.len();
            loop {
                let mut s: Vec<usize> = rand::seq::index::sample(rng, 5, k).into_vec();
                s.sort_unstable();
                if s != winner.selected {
                    loser.selected = s;
                    break;
                }
            }
        }
        Element::Layout => {
            let mut boxes = vec![random_box(rng, ElementKind::Product)];
            for _ in 0..winner.selected.len() {
                boxes.push(random_box(rng, ElementKind::Text));
            }
            loser.layout = Layout::new(boxes);
        }
    }
    PreferencePair {
        product_id: rng.random_range(0..16),
        candidates: cands,
        winner,
        loser,
        replaced_element: element,
        winner_ctr: 0.05,
        loser_ctr: 0.04,
    }
}
