//! Poster design elements: background descriptor, selected texts and layout.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::vocab::{Token, MAX_CANDIDATES, NUM_BINS, NUM_COLORS, NUM_TEXTURES};
use crate::error::{Error, Result};

pub const MAX_TEXT_LEN: usize = 12;
pub const MAX_TEXT_BOXES: usize = 3;

/// Ordered, unique candidate texts offered to the design policy for one product.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct CandidateTextSet {
    texts: Vec<String>,
}

impl CandidateTextSet {
    /// Texts must be 1-12 characters over the toy alphabet, without leading or
    /// trailing spaces (those would be invisible once rendered).
    pub fn new<S: Into<String>>(texts: impl IntoIterator<Item = S>) -> Result<Self> {
        let texts: Vec<String> = texts.into_iter().map(Into::into).collect();
        if texts.is_empty() {
            return Err(Error::invalid("candidate text set is empty"));
        }
        if texts.len() > MAX_CANDIDATES {
            return Err(Error::invalid(format!(
                "{} candidates exceeds the maximum of {MAX_CANDIDATES}",
                texts.len()
            )));
        }
        for (i, t) in texts.iter().enumerate() {
            validate_text(t)?;
            if texts[..i].contains(t) {
                return Err(Error::invalid(format!("duplicate candidate {t:?}")));
            }
        }
        Ok(Self { texts })
    }

    pub fn texts(&self) -> &[String] {
        &self.texts
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&str> {
        self.texts.get(i).map(String::as_str)
    }
}

impl<'de> Deserialize<'de> for CandidateTextSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let texts = Vec::<String>::deserialize(d)?;
        CandidateTextSet::new(texts).map_err(serde::de::Error::custom)
    }
}

pub fn validate_text(t: &str) -> Result<()> {
    let len = t.len();
    if len == 0 || len > MAX_TEXT_LEN {
        return Err(Error::invalid(format!("text {t:?} must have 1..={MAX_TEXT_LEN} characters")));
    }
    if let Some(c) = t.bytes().find(|&c| !Token::is_char(c)) {
        return Err(Error::invalid(format!("text {t:?} contains {:?} outside the alphabet", c as char)));
    }
    if t.starts_with(' ') || t.ends_with(' ') {
        return Err(Error::invalid(format!("text {t:?} has leading or trailing space")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Background {
    pub color: u8,
    pub texture: u8,
}

impl Background {
    pub const COUNT: usize = NUM_COLORS * NUM_TEXTURES;

    pub fn new(color: u8, texture: u8) -> Result<Self> {
        if color as usize >= NUM_COLORS || texture as usize >= NUM_TEXTURES {
            return Err(Error::invalid(format!("background ({color},{texture}) outside the descriptor vocabulary")));
        }
        Ok(Self { color, texture })
    }

    /// Dense index in `0..COUNT`.
    pub fn index(self) -> usize {
        self.color as usize * NUM_TEXTURES + self.texture as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self { color: (i / NUM_TEXTURES) as u8, texture: (i % NUM_TEXTURES) as u8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Product,
    Text,
}

/// Axis-aligned box on the 64-bin grid; bin `k` sits at coordinate `k / 63`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BBox {
    pub kind: ElementKind,
    pub bins: [u8; 4],
}

const GRID_MAX: f64 = (NUM_BINS - 1) as f64;

pub fn bin_to_unit(b: u8) -> f64 {
    b as f64 / GRID_MAX
}

pub fn unit_to_bin(v: f64) -> Result<u8> {
    if !v.is_finite() || !(0.0..=1.0).contains(&v) {
        return Err(Error::invalid(format!("coordinate {v} outside [0,1]")));
    }
    Ok((v * GRID_MAX).round() as u8)
}

impl BBox {
    pub fn from_bins(kind: ElementKind, bins: [u8; 4]) -> Result<Self> {
        let b = Self { kind, bins };
        b.validate()?;
        Ok(b)
    }

    /// Quantizes unit coordinates `(x0, y0, x1, y1)` onto the grid.
    pub fn from_unit(kind: ElementKind, coords: [f64; 4]) -> Result<Self> {
        let mut bins = [0u8; 4];
        for (b, &c) in bins.iter_mut().zip(&coords) {
            *b = unit_to_bin(c)?;
        }
        Self::from_bins(kind, bins)
    }

    pub fn validate(&self) -> Result<()> {
        let [x0, y0, x1, y1] = self.bins;
        if x1 as usize >= NUM_BINS || y1 as usize >= NUM_BINS {
            return Err(Error::InvalidLayout(format!("bin outside grid in {:?}", self.bins)));
        }
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::InvalidLayout(format!("box {:?} has non-positive extent", self.bins)));
        }
        Ok(())
    }

    pub fn coords(&self) -> [f64; 4] {
        self.bins.map(bin_to_unit)
    }

    pub fn width(&self) -> f64 {
        let [x0, _, x1, _] = self.coords();
        x1 - x0
    }

    pub fn height(&self) -> f64 {
        let [_, y0, _, y1] = self.coords();
        y1 - y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Pixel rectangle `(x0, y0, x1, y1)` (half-open) on a `size`-square canvas.
    pub fn pixel_rect(&self, size: usize) -> (usize, usize, usize, usize) {
        let px = |b: u8| (bin_to_unit(b) * size as f64).round() as usize;
        let [x0, y0, x1, y1] = self.bins;
        (px(x0), px(y0), px(x1), px(y1))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Layout {
    pub boxes: Vec<BBox>,
}

impl Layout {
    pub fn new(boxes: Vec<BBox>) -> Self {
        Self { boxes }
    }

    pub fn product_box(&self) -> Option<&BBox> {
        self.boxes.iter().find(|b| b.kind == ElementKind::Product)
    }

    pub fn text_boxes(&self) -> impl Iterator<Item = &BBox> {
        self.boxes.iter().filter(|b| b.kind == ElementKind::Text)
    }

    pub fn num_text_boxes(&self) -> usize {
        self.text_boxes().count()
    }

    /// Checks the poster-layout invariants: valid boxes, exactly one product
    /// box and 1-3 text boxes.
    pub fn validate(&self) -> Result<()> {
        for b in &self.boxes {
            b.validate()?;
        }
        let products = self.boxes.iter().filter(|b| b.kind == ElementKind::Product).count();
        if products != 1 {
            return Err(Error::InvalidLayout(format!("expected one product box, found {products}")));
        }
        let texts = self.num_text_boxes();
        if !(1..=MAX_TEXT_BOXES).contains(&texts) {
            return Err(Error::InvalidLayout(format!("expected 1..={MAX_TEXT_BOXES} text boxes, found {texts}")));
        }
        Ok(())
    }
}

/// The structured design triple: background, selected candidate indices and layout.
///
/// Selected indices are kept in ascending order; the k-th text box of the
/// layout carries the k-th selected text.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Design {
    pub background: Background,
    pub selected: Vec<usize>,
    pub layout: Layout,
}

impl Design {
    pub fn validate(&self, num_candidates: Option<usize>) -> Result<()> {
        Background::new(self.background.color, self.background.texture)?;
        self.layout.validate()?;
        if self.selected.is_empty() || self.selected.len() > MAX_TEXT_BOXES {
            return Err(Error::Validation(format!("{} selected texts, expected 1..={MAX_TEXT_BOXES}", self.selected.len())));
        }
        if self.selected.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation(format!("selected indices {:?} must be strictly ascending", self.selected)));
        }
        if let Some(&i) = self.selected.iter().find(|&&i| i >= MAX_CANDIDATES) {
            return Err(Error::Validation(format!("selected index {i} outside the index vocabulary")));
        }
        if let Some(n) = num_candidates {
            if let Some(&i) = self.selected.iter().find(|&&i| i >= n) {
                return Err(Error::Validation(format!("selected index {i} but only {n} candidates")));
            }
        }
        if self.selected.len() != self.layout.num_text_boxes() {
            return Err(Error::Validation(format!(
                "{} selected texts but {} text boxes",
                self.selected.len(),
                self.layout.num_text_boxes()
            )));
        }
        Ok(())
    }

    pub fn selected_texts<'a>(&self, candidates: &'a CandidateTextSet) -> Result<Vec<&'a str>> {
        self.selected
            .iter()
            .map(|&i| candidates.get(i).ok_or_else(|| Error::Validation(format!("selected index {i} out of range"))))
            .collect()
    }
}

type BoxRepr = (ElementKind, f64, f64, f64, f64);

impl Serialize for Layout {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let boxes: Vec<BoxRepr> = self
            .boxes
            .iter()
            .map(|b| {
                let [x0, y0, x1, y1] = b.coords();
                (b.kind, x0, y0, x1, y1)
            })
            .collect();
        boxes.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Layout {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let boxes = Vec::<BoxRepr>::deserialize(d)?
            .into_iter()
            .map(|(kind, x0, y0, x1, y1)| BBox::from_unit(kind, [x0, y0, x1, y1]))
            .collect::<Result<Vec<_>>>()
            .map_err(serde::de::Error::custom)?;
        Ok(Layout::new(boxes))
    }
}

#[derive(Serialize, Deserialize)]
struct DesignRepr {
    background: [u8; 2],
    selected: Vec<usize>,
    layout: Layout,
}

impl Serialize for Design {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        DesignRepr {
            background: [self.background.color, self.background.texture],
            selected: self.selected.clone(),
            layout: self.layout.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Design {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = DesignRepr::deserialize(d)?;
        let background = Background::new(r.background[0], r.background[1]).map_err(serde::de::Error::custom)?;
        Ok(Design { background, selected: r.selected, layout: r.layout })
    }
}
