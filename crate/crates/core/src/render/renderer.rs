//! Rendering a design into a poster, behind one interface.

use super::compose::synthesize_example;
use super::model::RendererModel;
use super::raster::Raster;
use super::sampler::{sample_poster, PosterConditions};
use crate::design::types::Design;
use crate::error::Result;

pub trait PosterRenderer {
    fn canvas(&self) -> usize;
    fn render(&self, design: &Design, texts: &[&str], sprite: &Raster, seed: u64) -> Result<Raster>;
}

/// Exact composition of background, product and glyphs. Serves as the
/// ground-truth renderer and as a fast stand-in for the learned one.
#[derive(Debug, Clone, Copy)]
pub struct Compositor {
    pub canvas: usize,
}

impl PosterRenderer for Compositor {
    fn canvas(&self) -> usize {
        self.canvas
    }

    fn render(&self, design: &Design, texts: &[&str], sprite: &Raster, seed: u64) -> Result<Raster> {
        Ok(synthesize_example(design, texts, sprite, self.canvas, seed)?.target)
    }
}

/// The learned flow model sampled with a fixed number of Euler steps.
pub struct FlowRenderer<'a> {
    pub model: &'a RendererModel,
    pub steps: usize,
}

impl PosterRenderer for FlowRenderer<'_> {
    fn canvas(&self) -> usize {
        self.model.config.codec.canvas
    }

    fn render(&self, design: &Design, texts: &[&str], sprite: &Raster, seed: u64) -> Result<Raster> {
        let cond = PosterConditions::from_design(design, texts, sprite, self.canvas())?;
        sample_poster(self.model, &cond, self.steps, seed)
    }
}
