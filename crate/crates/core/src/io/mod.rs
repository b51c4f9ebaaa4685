//! Annotation documents, RGB-D frame directories, the synthetic scene
//! generator and corpus statistics.

mod document;
mod frames;
mod stats;
mod synth;

use std::path::PathBuf;

pub use document::{
    load_document, load_document_dir, parse_document, render_document, save_document, AnnotationDocument, ObjectRecord,
    RelationRecord, SCHEMA_VERSION,
};
pub use frames::{depth_name, load_frames, rgb_name, save_frames};
pub use stats::{dataset_stats, DatasetStats};
pub use synth::{
    expected_recall, generate_synthetic, write_synthetic, RelationFate, SynthConfig, SynthError, SynthVideo,
    VideoBookkeeping,
};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    /// `field` is a path such as `relations[3].begin`; empty for whole-document errors.
    #[error("{}{}: {}{message}", file.display(), line.map(|l| format!(":{l}")).unwrap_or_default(), if field.is_empty() { String::new() } else { format!("{field}: ") })]
    Schema { file: PathBuf, line: Option<usize>, field: String, message: String },
    #[error("{}: {message}", dir.display())]
    Frames { dir: PathBuf, message: String },
}

impl IoError {
    /// Schema and frame problems are input errors; the rest are operational.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, IoError::Io { .. })
    }
}
