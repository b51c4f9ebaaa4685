//! Prompt rendering for the four-stage chained scene-graph inference.

use serde::{Deserialize, Serialize};

pub const STAGE_HEADERS: [&str; 4] = [
    "Inference stage 1: Object Description and Categorization",
    "Inference stage 2: Semantic Relation Identification",
    "Inference stage 3: Precise Relation Description",
    "Inference stage 4: Temporal Span Determination",
];

pub const FINAL_HEADER: &str = "Final Output Format";

const INSTRUCTION: &str = "You are a scene expert with professional skills in generating an SG triplets sequence. You follow these four detailed steps to ensure a logical, step-by-step approach to SG generation:";

const STAGE_BODIES: [&str; 4] = [
    "For each object in the scene, do not immediately output its name. Instead, start by describing each object in detail.
Provide a description of each object based on its appearance, shape, structure, and any unique characteristics observed in the scene.
After giving a detailed description, assign a category to the object that best fits the objects (e.g., \"person\", \"table\", \"chair\", etc.).
Expected Output: (description, object_1), ...",
    "Based on the identified objects, analyze which pairs of objects may have semantic relations. Consider spatial positioning, interactions, and any logical connections that might exist between them.
Identify only pairs that have a meaningful relationship and briefly explain why these pairs might be related.
Expected Output: (object_i, object_j), ...",
    "For each object pair identified in Step 2, describe the exact nature of the relation between the two objects as precisely as possible.
Use clear, concise language to specify the relation type (e.g., \"sitting on,\" \"holding,\" \"near,\" etc.) and provide additional context if necessary to ensure the relation is unambiguous.
Expected Output: (object_i, relation_k object_j), ...",
    "For each identified relation, determine its duration or time span. Indicate if the relation is continuous, occurs intermittently, or exists only at a specific moment within the scene.
Use a numerical value for the duration, such as a time interval (e.g., (0.1, 0.7) )
Expected Output: (object_i, relation_k object_j, start_time, end_time), ...",
];

const FINAL_BODY: &str = "For each object pair and relation, generate SG triplets in the following format:
Expected Output: (object_i, relation_k object_j, start_time, end_time), ...";

/// Worked in-context examples, in prompt order.
pub const EXAMPLES: [&str; 3] = [
    include_str!("fixtures/example1.txt"),
    include_str!("fixtures/example2.txt"),
    include_str!("fixtures/example3.txt"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptStage {
    Stage(u8),
    Full,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PromptError {
    #[error("stage must be 1..=4, got {0}")]
    BadStage(u8),
    #[error("stage {stage} needs the output of stage {missing}")]
    MissingPriorStage { stage: u8, missing: u8 },
    #[error("only {available} in-context examples are available, {requested} requested")]
    TooManyExamples { requested: usize, available: usize },
}

/// Opaque reference to the scene being described.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDescriptor {
    pub video_id: String,
    /// Seconds.
    pub duration: f64,
    #[serde(default = "one")]
    pub frames: usize,
    #[serde(default = "one")]
    pub width: usize,
    #[serde(default = "one")]
    pub height: usize,
}

fn one() -> usize {
    1
}

impl SceneDescriptor {
    pub fn new(video_id: impl Into<String>, duration: f64) -> Self {
        Self { video_id: video_id.into(), duration, frames: 1, width: 1, height: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub instruction: String,
    pub stage_headers: [String; 4],
    pub stage_bodies: [String; 4],
    pub final_body: String,
    pub examples: Vec<String>,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            instruction: INSTRUCTION.to_string(),
            stage_headers: STAGE_HEADERS.map(str::to_string),
            stage_bodies: STAGE_BODIES.map(str::to_string),
            final_body: FINAL_BODY.to_string(),
            examples: EXAMPLES.iter().map(|e| e.trim_end().to_string()).collect(),
        }
    }
}

impl PromptTemplate {
    /// The instruction box: input line, instruction, the four stages and the
    /// final output format.
    pub fn render_instruction(&self, scene: &SceneDescriptor) -> String {
        let mut out = format!(
            "Input Data: 4D Scene <{}>, the duration {} s\nInstruction: {}\n",
            scene.video_id, scene.duration, self.instruction
        );
        for (header, body) in self.stage_headers.iter().zip(&self.stage_bodies) {
            out.push_str(&format!("\n{header}.\n{body}\n"));
        }
        out.push_str(&format!("\n{FINAL_HEADER}:\n{}\n", self.final_body));
        out
    }

    /// Renders a prompt. `prior` holds the raw outputs of earlier stages in
    /// order; stage `n` needs `n - 1` of them.
    pub fn build(
        &self,
        stage: PromptStage,
        scene: &SceneDescriptor,
        prior: &[String],
        examples: usize,
    ) -> Result<String, PromptError> {
        if examples > self.examples.len() {
            return Err(PromptError::TooManyExamples { requested: examples, available: self.examples.len() });
        }
        if let PromptStage::Stage(n) = stage {
            if !(1..=4).contains(&n) {
                return Err(PromptError::BadStage(n));
            }
            if prior.len() + 1 < n as usize {
                return Err(PromptError::MissingPriorStage { stage: n, missing: prior.len() as u8 + 1 });
            }
        }
        let mut out = self.render_instruction(scene);
        if examples > 0 {
            out.push_str("\nIn-context Examples:\n");
            for e in &self.examples[..examples] {
                out.push('\n');
                out.push_str(e);
                out.push('\n');
            }
        }
        match stage {
            PromptStage::Full => {
                out.push_str(
                    "\nNow perform all four inference stages for the input scene, then give the final output.\n",
                );
            }
            PromptStage::Stage(n) => {
                let n = n as usize;
                for (i, text) in prior.iter().take(n - 1).enumerate() {
                    out.push_str(&format!("\n{}. Output:\n{}\n", self.stage_headers[i], text.trim()));
                }
                out.push_str(&format!(
                    "\nNow perform {} for the input scene. Respond with the expected output of this stage only.\n",
                    self.stage_headers[n - 1]
                ));
            }
        }
        Ok(out)
    }
}

/// Convenience wrapper over the default template.
pub fn build_prompt(
    stage: PromptStage,
    scene: &SceneDescriptor,
    prior: &[String],
    examples: usize,
) -> Result<String, PromptError> {
    PromptTemplate::default().build(stage, scene, prior, examples)
}

/// Section texts of a full stage-annotated document: one entry per stage
/// (1..=4) plus the final output section, each `None` when absent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sections {
    pub stages: [Option<String>; 4],
    pub final_output: Option<String>,
}

/// Splits text containing stage headers (as in a worked example or a
/// single-call response) into per-stage sections.
pub fn split_sections(text: &str) -> Sections {
    let mut marks: Vec<(usize, usize, Option<usize>)> = Vec::new();
    for (i, h) in STAGE_HEADERS.iter().enumerate() {
        if let Some(pos) = text.find(h) {
            marks.push((pos, pos + h.len(), Some(i)));
        }
    }
    if let Some(pos) = text.find(FINAL_HEADER) {
        marks.push((pos, pos + FINAL_HEADER.len(), None));
    }
    marks.sort();
    let mut out = Sections::default();
    for (idx, &(_, body_start, which)) in marks.iter().enumerate() {
        let end = marks.get(idx + 1).map_or(text.len(), |m| m.0);
        let body = text[body_start..end].trim_start_matches(['.', ':']).trim().to_string();
        match which {
            Some(i) => out.stages[i] = Some(body),
            None => out.final_output = Some(body),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> SceneDescriptor {
        SceneDescriptor::new("vid-0001", 84.0)
    }

    #[test]
    fn full_prompt_has_headers_in_order() {
        let p = build_prompt(PromptStage::Full, &scene(), &[], 0).unwrap();
        assert!(p.contains("Inference stage 4: Temporal Span Determination"));
        let positions: Vec<usize> = STAGE_HEADERS.iter().map(|h| p.find(h).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert!(p.contains("You are a scene expert"));
    }

    #[test]
    fn one_example_appended_verbatim() {
        let p = build_prompt(PromptStage::Full, &scene(), &[], 1).unwrap();
        assert!(p.contains(EXAMPLES[0].trim_end()));
        assert!(!p.contains("[Example-2]"));
    }

    #[test]
    fn deterministic() {
        let a = build_prompt(PromptStage::Stage(3), &scene(), &["x".into(), "y".into()], 2).unwrap();
        let b = build_prompt(PromptStage::Stage(3), &scene(), &["x".into(), "y".into()], 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_prior_stage() {
        let err = build_prompt(PromptStage::Stage(3), &scene(), &["x".into()], 0).unwrap_err();
        assert_eq!(err, PromptError::MissingPriorStage { stage: 3, missing: 2 });
        assert!(build_prompt(PromptStage::Stage(5), &scene(), &[], 0).is_err());
        assert!(build_prompt(PromptStage::Full, &scene(), &[], 9).is_err());
    }

    #[test]
    fn example_sections() {
        let s = split_sections(EXAMPLES[1]);
        assert!(s.stages.iter().all(Option::is_some));
        assert!(s.final_output.as_deref().unwrap().starts_with("(Person 1, in front of"));
        assert!(s.stages[0].as_deref().unwrap().starts_with("Object 1:"));
    }
}
