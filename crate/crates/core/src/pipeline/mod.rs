//! Config-driven orchestration of the staged training recipe over the
//! toy transcending model.

mod data;
mod plan;
mod run;

use std::path::PathBuf;

pub use data::{batch_for, DataRegistry, Sample, SynthKind};
pub use plan::{
    default_plan, has_errors, required_roles, supports, toy_plan, validate_plan, without_step, DataRole, Plan,
    PlanViolation, ScheduleKind, Severity, StagePlan, StepHyper, StepId,
};
pub use run::{
    checkpoint_paths, read_manifest, run, RunManifest, RunOptions, StepRecord, SubstepRecord, MANIFEST_FILE,
};

use crate::transcend::TranscendError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid plan: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidPlan(Vec<PlanViolation>),
    #[error("step {step}: dataset {name:?} is missing or empty")]
    MissingDataset { step: String, name: String },
    #[error("step {step}: non-finite {detail}")]
    NonFinite { step: String, detail: String },
    #[error("existing manifest was written for a different plan or seed")]
    ResumeMismatch,
    #[error("{}:{line}: {message}", path.display())]
    Manifest { path: PathBuf, line: usize, message: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Transcend(#[from] TranscendError),
}

impl PipelineError {
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            PipelineError::InvalidPlan(_) | PipelineError::MissingDataset { .. } | PipelineError::ResumeMismatch
        )
    }
}
