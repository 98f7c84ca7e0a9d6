//! Poster generation and CTR-driven optimization at desk scale.
//!
//! The crate covers a design policy that emits poster elements, a
//! flow-matching renderer with decomposed attention, offline metrics,
//! single-element replacement, a simulated click environment and
//! preference optimization (DPO and its element-weighted variant).

pub mod closed_loop;
pub mod design;
pub mod error;
pub mod feedback;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod preference;
pub mod render;
pub mod replacement;
pub mod seeds;
pub mod synth;

pub use error::{Error, Result};
