//! The design policy: an autoregressive model that jointly emits the
//! background descriptor, the selected candidate texts and the layout.

pub mod codec;
pub mod data;
pub mod policy;
pub mod sample;
pub mod train;
pub mod types;
pub mod vocab;

pub use codec::{format_instruction, parse_design, serialize_design, InstructionText, SerializedDesign, SpanTag};
pub use data::DesignExample;
pub use policy::{DesignPolicy, PolicyConfig, PolicyInput, TokenLogprobs};
pub use sample::{sample_continuation, sample_design, DecodeConfig, DecodeMode};
pub use train::{train_design, DesignTrainConfig, DesignTrainReport};
pub use types::{BBox, Background, CandidateTextSet, Design, ElementKind, Layout};
pub use vocab::{Token, VOCAB_SIZE};
