//! Chained four-stage scene-graph inference over a text backend.

pub mod backend;
mod chain;
pub mod parse;
pub mod prompt;
pub mod sequence;
mod transcript;

pub use backend::{
    BackendError, BackendRequest, BackendResponse, FinishReason, HttpBackend, HttpConfig, MockBackend, TextBackend,
};
pub use chain::{absorb_single, run_pipeline, CallMode, InferenceConfig, InferenceError};
pub use parse::{parse_stage, ObjectEntry, StageOutput, Triplet};
pub use prompt::{build_prompt, split_sections, PromptStage, PromptTemplate, SceneDescriptor};
pub use sequence::{parse_output_sequence, ParsedSequence, SequenceClause};
pub use transcript::{assign_instances, FixtureMasks, InferenceTranscript, MaskProvider};
