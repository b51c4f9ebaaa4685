//! Drives a backend through the four inference stages.

use serde::{Deserialize, Serialize};

use super::backend::{BackendError, BackendRequest, TextBackend};
use super::parse::{parse_objects, parse_pairs, parse_quintuples, parse_triplets};
use super::prompt::{split_sections, PromptError, PromptStage, PromptTemplate, SceneDescriptor};
use super::transcript::{assign_instances, InferenceTranscript, MaskProvider};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CallMode {
    /// One request per stage, earlier outputs fed forward.
    #[default]
    FourCalls,
    /// One request whose response carries all stage sections.
    SingleCall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    pub examples: usize,
    pub mode: CallMode,
    pub max_tokens: u32,
    pub temperature: f64,
    pub stop: Vec<String>,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self { examples: 1, mode: CallMode::FourCalls, max_tokens: 1024, temperature: 0.0, stop: Vec::new() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum InferenceError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("backend failed at stage {stage}: {source}")]
    Backend {
        stage: u8,
        #[source]
        source: BackendError,
        partial: Box<InferenceTranscript>,
    },
}

impl InferenceError {
    pub fn is_retriable(&self) -> bool {
        match self {
            InferenceError::Backend { source, .. } => source.is_retriable(),
            InferenceError::Prompt(_) => false,
        }
    }

    /// Transcript state at the point of failure.
    pub fn partial(&self) -> Option<&InferenceTranscript> {
        match self {
            InferenceError::Backend { partial, .. } => Some(partial),
            InferenceError::Prompt(_) => None,
        }
    }
}

fn request(prompt: String, cfg: &InferenceConfig) -> BackendRequest {
    BackendRequest { prompt, max_tokens: cfg.max_tokens, temperature: cfg.temperature, stop: cfg.stop.clone() }
}

/// Stores a stage's parsed output into the transcript.
fn absorb(t: &mut InferenceTranscript, stage: u8, text: &str) {
    let known = t.labels();
    let warnings = match stage {
        1 => {
            let mut p = parse_objects(text);
            assign_instances(&mut p.items);
            t.stage1 = p.items;
            p.warnings
        }
        2 => {
            let p = parse_pairs(text);
            t.stage2 = p.items;
            p.warnings
        }
        3 => {
            let p = parse_triplets(text, &known);
            t.stage3 = p.items;
            p.warnings
        }
        _ => {
            let p = parse_quintuples(text, &known);
            t.stage4 = p.items;
            p.warnings
        }
    };
    t.warnings.extend(warnings.into_iter().map(|w| format!("stage {stage}: {w}")));
}

/// Runs chained inference for one scene and returns the validated
/// transcript with its assembled graph.
pub fn run_pipeline(
    scene: &SceneDescriptor,
    backend: &dyn TextBackend,
    cfg: &InferenceConfig,
    masks: Option<&dyn MaskProvider>,
) -> Result<InferenceTranscript, InferenceError> {
    let template = PromptTemplate::default();
    let mut t = InferenceTranscript::new(&scene.video_id);
    match cfg.mode {
        CallMode::FourCalls => {
            for stage in 1..=4u8 {
                let prompt = template.build(PromptStage::Stage(stage), scene, &t.raw_texts, cfg.examples)?;
                let resp = backend.generate(&request(prompt, cfg)).map_err(|source| InferenceError::Backend {
                    stage,
                    source,
                    partial: Box::new(t.clone()),
                })?;
                absorb(&mut t, stage, &resp.text);
                t.raw_texts.push(resp.text);
            }
            t.final_output = t.stage4.clone();
        }
        CallMode::SingleCall => {
            let prompt = template.build(PromptStage::Full, scene, &[], cfg.examples)?;
            let resp = backend.generate(&request(prompt, cfg)).map_err(|source| InferenceError::Backend {
                stage: 1,
                source,
                partial: Box::new(t.clone()),
            })?;
            absorb_single(&mut t, &resp.text);
            t.raw_texts.push(resp.text);
        }
    }
    t.validate();
    t.assemble(masks);
    Ok(t)
}

/// Fills a transcript from a single response containing stage headers.
pub fn absorb_single(t: &mut InferenceTranscript, text: &str) {
    let sections = split_sections(text);
    for (i, s) in sections.stages.iter().enumerate() {
        match s {
            Some(s) => absorb(t, i as u8 + 1, s),
            None => t.warnings.push(format!("stage {}: section missing", i + 1)),
        }
    }
    match &sections.final_output {
        Some(f) => {
            let p = parse_quintuples(f, &t.labels());
            t.warnings.extend(p.warnings.into_iter().map(|w| format!("final output: {w}")));
            t.final_output = p.items;
        }
        None => t.final_output = t.stage4.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::backend::MockBackend;
    use crate::inference::prompt::EXAMPLES;

    fn script(example: &str) -> Vec<String> {
        let s = split_sections(example);
        s.stages.iter().map(|x| x.clone().unwrap()).collect()
    }

    fn scene() -> SceneDescriptor {
        SceneDescriptor::new("vid", 10.0)
    }

    #[test]
    fn replays_railroad_example() {
        let mock = MockBackend::new(script(EXAMPLES[1]));
        let t = run_pipeline(&scene(), &mock, &InferenceConfig::default(), None).unwrap();
        assert_eq!(mock.served(), 4);
        assert_eq!(t.stage1.len(), 6);
        assert_eq!(t.stage2.len(), 6);
        assert_eq!(t.stage3.len(), 7);
        assert_eq!(t.final_output.len(), 7);
        assert_eq!(t.graph.relations.len(), 7);
        assert_eq!(t.graph.objects[1].instance_index, Some(2));
        // earlier stage outputs are fed forward
        assert!(mock.prompts()[3].contains("(Person 1, in front of, Person 2)"));
    }

    #[test]
    fn replays_first_example() {
        let mock = MockBackend::new(script(EXAMPLES[0]));
        let t = run_pipeline(&scene(), &mock, &InferenceConfig::default(), None).unwrap();
        assert_eq!(t.final_output.len(), 4);
        assert_eq!(t.final_output[3].render(), "(ground, part of, field, 0, 1)");
    }

    #[test]
    fn garbage_stage_three_degrades() {
        let mut s = script(EXAMPLES[1]);
        s[2] = "the model rambled here }{ (((".into();
        let t = run_pipeline(&scene(), &MockBackend::new(s), &InferenceConfig::default(), None).unwrap();
        assert!(t.stage3.is_empty());
        assert!(t.final_output.is_empty());
        assert!(t.graph.relations.is_empty());
        assert!(!t.warnings.is_empty());
    }

    #[test]
    fn single_call_mode() {
        let cfg = InferenceConfig { mode: CallMode::SingleCall, ..Default::default() };
        let mock = MockBackend::new([EXAMPLES[2]]);
        let t = run_pipeline(&scene(), &mock, &cfg, None).unwrap();
        assert_eq!(mock.served(), 1);
        assert_eq!(t.stage1.len(), 5);
        assert_eq!(t.final_output.len(), 6);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mock = MockBackend::new(script(EXAMPLES[1]));
            serde_json::to_string(&run_pipeline(&scene(), &mock, &InferenceConfig::default(), None).unwrap()).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn exhausted_backend_keeps_partial() {
        let s = script(EXAMPLES[1]);
        let mock = MockBackend::new(s[..2].to_vec());
        let err = run_pipeline(&scene(), &mock, &InferenceConfig::default(), None).unwrap_err();
        let partial = err.partial().unwrap();
        assert_eq!(partial.stage2.len(), 6);
        assert!(matches!(err, InferenceError::Backend { stage: 3, .. }));
    }
}
