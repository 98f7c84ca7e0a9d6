//! Systematic element replacement: variants that differ from a design in
//! exactly one element.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::codec::{format_instruction, serialize_design};
use crate::design::policy::DesignPolicy;
use crate::design::sample::{sample_continuation, DecodeConfig, DecodeMode};
use crate::design::vocab::Token;
use crate::design::types::{Background, CandidateTextSet, Design};
use crate::error::{Error, Result};
use crate::metrics::max_iou;
use crate::render::glyph::render_glyph_image;
use crate::render::{PosterRenderer, Raster};
use crate::seeds::derive_seed;

/// Layouts at or above this MIoU with the original count as the same layout.
pub const LAYOUT_DISTINCT_MIOU: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Element {
    Background,
    Text,
    Layout,
}

impl Element {
    pub const ALL: [Element; 3] = [Element::Background, Element::Text, Element::Layout];
}

impl std::fmt::Display for Element {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Element::Background => "background",
            Element::Text => "text",
            Element::Layout => "layout",
        })
    }
}

impl std::str::FromStr for Element {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "background" => Ok(Element::Background),
            "text" => Ok(Element::Text),
            "layout" => Ok(Element::Layout),
            _ => Err(Error::invalid(format!("unknown element {s:?}"))),
        }
    }
}

/// Elements whose fields differ between two designs.
pub fn design_diff(a: &Design, b: &Design) -> Vec<Element> {
    let mut out = Vec::new();
    if a.background != b.background {
        out.push(Element::Background);
    }
    if a.selected != b.selected {
        out.push(Element::Text);
    }
    if a.layout != b.layout {
        out.push(Element::Layout);
    }
    out
}

pub fn differs_only_in(a: &Design, b: &Design, element: Element) -> bool {
    design_diff(a, b) == [element]
}

pub trait BackgroundPerturber {
    fn perturb(&self, current: Background, rng: &mut ChaCha8Rng) -> Result<Background>;
}

/// Uniform choice among all other descriptors in `vocab`.
#[derive(Debug, Clone)]
pub struct UniformPerturber {
    pub vocab: Vec<Background>,
}

impl Default for UniformPerturber {
    fn default() -> Self {
        Self { vocab: (0..Background::COUNT).map(|i| Background::from_index(i)).collect() }
    }
}

impl BackgroundPerturber for UniformPerturber {
    fn perturb(&self, current: Background, rng: &mut ChaCha8Rng) -> Result<Background> {
        let others: Vec<Background> = self.vocab.iter().copied().filter(|b| *b != current).collect();
        others.choose(rng).copied().ok_or_else(|| Error::CannotPerturb("no other background descriptor".into()))
    }
}

pub fn replace_background(d: &Design, perturber: &dyn BackgroundPerturber, seed: u64) -> Result<Design> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = perturber.perturb(d.background, &mut rng)?;
    if background == d.background {
        return Err(Error::CannotPerturb("perturber returned the original background".into()));
    }
    Ok(Design { background, ..d.clone() })
}

/// Swap every selected text for a distinct, unselected candidate of equal
/// length. Text boxes follow ascending selection order, so only assignments
/// that keep the new indices ascending slot by slot are admissible; one is
/// drawn uniformly.
pub fn replace_text(d: &Design, candidates: &CandidateTextSet, seed: u64) -> Result<Design> {
    let texts = candidates.texts();
    let options: Vec<Vec<usize>> = d
        .selected
        .iter()
        .map(|&i| {
            let len = texts.get(i).map(|t| t.len()).ok_or_else(|| Error::Validation(format!("index {i} out of range")))?;
            let opts: Vec<usize> = (0..texts.len()).filter(|j| !d.selected.contains(j) && texts[*j].len() == len).collect();
            if opts.is_empty() {
                return Err(Error::NoAlternative(format!("no unselected {len}-character alternative for {:?}", texts[i])));
            }
            Ok(opts)
        })
        .collect::<Result<_>>()?;
    let mut assignments = Vec::new();
    fn extend(options: &[Vec<usize>], prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let Some((first, rest)) = options.split_first() else {
            out.push(prefix.clone());
            return;
        };
        for &j in first {
            if prefix.last().is_none_or(|&p| j > p) {
                prefix.push(j);
                extend(rest, prefix, out);
                prefix.pop();
            }
        }
    }
    extend(&options, &mut Vec::new(), &mut assignments);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let selected = assignments
        .choose(&mut rng)
        .cloned()
        .ok_or_else(|| Error::NoAlternative("length-matched alternatives cannot keep the text order".into()))?;
    Ok(Design { selected, ..d.clone() })
}

/// Source of alternative layouts for one product.
pub trait DesignProposer {
    /// A design for `product_id`; implementations keep `base`'s background
    /// and text selection where they can and resample the layout.
    fn propose(&self, product_id: usize, candidates: &CandidateTextSet, base: &Design, seed: u64) -> Result<Design>;
}

/// Temperature sampling from the design policy, with the background and
/// text tokens of the base design forced. Text boxes are constrained to fit
/// their texts on a `canvas` grid.
pub struct PolicyProposer<'a> {
    pub policy: &'a DesignPolicy,
    pub temperature: f64,
    pub canvas: usize,
}

impl DesignProposer for PolicyProposer<'_> {
    fn propose(&self, product_id: usize, candidates: &CandidateTextSet, base: &Design, seed: u64) -> Result<Design> {
        let instr = format_instruction(candidates)?;
        let tokens = serialize_design(base)?.tokens;
        let lay = tokens.iter().position(|t| *t == Token::Lay).expect("serialized designs contain <LAY>");
        let text_chars = candidates.texts().iter().map(|t| t.chars().count()).collect();
        let cfg = DecodeConfig { mode: DecodeMode::Temperature, temperature: self.temperature, seed, text_chars, canvas: self.canvas, ..Default::default() };
        sample_continuation(self.policy, product_id, &instr, candidates.len(), &tokens[..=lay], &cfg)
    }
}

/// Adopt the layout of the first proposal that has the same number of text
/// boxes, fits the original texts on a `canvas` grid and has MIoU below
/// [`LAYOUT_DISTINCT_MIOU`] with the original layout.
pub fn replace_layout(
    d: &Design,
    candidates: &CandidateTextSet,
    proposer: &dyn DesignProposer,
    product_id: usize,
    canvas: usize,
    seed: u64,
    max_attempts: usize,
) -> Result<Design> {
    let texts = d.selected_texts(candidates)?;
    for attempt in 0..max_attempts {
        let proposal = match proposer.propose(product_id, candidates, d, derive_seed(seed, &format!("layout/{attempt}"))) {
            Ok(p) => p,
            Err(Error::GenerationFailure { .. }) => continue,
            Err(e) => return Err(e),
        };
        let l = proposal.layout;
        if l.num_text_boxes() != d.layout.num_text_boxes() || max_iou(&l, &d.layout) >= LAYOUT_DISTINCT_MIOU {
            continue;
        }
        if render_glyph_image(&texts, &l, canvas).is_err() {
            continue;
        }
        return Ok(Design { layout: l, ..d.clone() });
    }
    Err(Error::NoDistinctLayout(max_attempts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSeeds {
    /// Randomness of the replacement itself.
    pub replace: u64,
    /// Render seed shared by both posters.
    pub render: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantPair {
    pub pair_id: String,
    pub product_id: usize,
    pub candidates: CandidateTextSet,
    pub base: Design,
    pub variant: Design,
    pub replaced_element: Element,
    pub render_seed: u64,
}

impl VariantPair {
    pub fn base_id(&self) -> String {
        format!("{}/base", self.pair_id)
    }

    pub fn variant_id(&self) -> String {
        format!("{}/variant", self.pair_id)
    }

    pub fn check(&self) -> Result<()> {
        if !differs_only_in(&self.base, &self.variant, self.replaced_element) {
            return Err(Error::DataIntegrity(format!(
                "pair {} differs in {:?}, expected only {}",
                self.pair_id,
                design_diff(&self.base, &self.variant),
                self.replaced_element
            )));
        }
        Ok(())
    }

    /// Render both posters with the same renderer and seed.
    pub fn render(&self, renderer: &dyn PosterRenderer, sprite: &Raster) -> Result<(Raster, Raster)> {
        let base = renderer.render(&self.base, &self.base.selected_texts(&self.candidates)?, sprite, self.render_seed)?;
        let variant = renderer.render(&self.variant, &self.variant.selected_texts(&self.candidates)?, sprite, self.render_seed)?;
        Ok((base, variant))
    }
}

/// Everything replacement needs beyond the design itself.
pub struct Replacer<'a> {
    pub perturber: &'a dyn BackgroundPerturber,
    pub proposer: Option<&'a dyn DesignProposer>,
    pub canvas: usize,
    pub max_attempts: usize,
}

impl Replacer<'_> {
    pub fn replace(&self, d: &Design, candidates: &CandidateTextSet, product_id: usize, element: Element, seed: u64) -> Result<Design> {
        match element {
            Element::Background => replace_background(d, self.perturber, seed),
            Element::Text => replace_text(d, candidates, seed),
            Element::Layout => {
                let proposer = self.proposer.ok_or_else(|| Error::invalid("layout replacement needs a design proposer"))?;
                replace_layout(d, candidates, proposer, product_id, self.canvas, seed, self.max_attempts)
            }
        }
    }

    pub fn build_variant_pair(
        &self,
        pair_id: String,
        product_id: usize,
        candidates: &CandidateTextSet,
        d: &Design,
        element: Element,
        seeds: PairSeeds,
    ) -> Result<VariantPair> {
        let variant = self.replace(d, candidates, product_id, element, seeds.replace)?;
        let pair = VariantPair {
            pair_id,
            product_id,
            candidates: candidates.clone(),
            base: d.clone(),
            variant,
            replaced_element: element,
            render_seed: seeds.render,
        };
        pair.check()?;
        Ok(pair)
    }
}
