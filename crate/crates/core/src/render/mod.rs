//! The element renderer: glyph and product conditions, a flow-matching
//! generator with decomposed attention, and a toy OCR for evaluation.

pub mod codec;
pub mod compose;
pub mod extractor;
pub mod flow;
pub mod font;
pub mod glyph;
pub mod loss;
pub mod model;
pub mod ocr;
pub mod raster;
pub mod renderer;
pub mod sampler;
pub mod train;

pub use compose::{make_sprite, place_product, synthesize_example, SynthExample};
pub use glyph::render_glyph_image;
pub use ocr::toy_ocr;
pub use raster::Raster;
pub use renderer::{Compositor, FlowRenderer, PosterRenderer};
