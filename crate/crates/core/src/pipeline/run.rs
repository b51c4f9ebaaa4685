use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{batch_for, DataRegistry};
use super::plan::{has_errors, supports, validate_plan, Plan, StagePlan};
use super::PipelineError;
use crate::transcend::{
    init_from, read_checkpoint, write_checkpoint, AdamWConfig, Component, FixtureFeatures, LossConfig, Model, Trainer,
    TranscendError,
};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstepRecord {
    pub id: String,
    pub seed: u64,
    /// Total loss before each update.
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u8,
    pub substeps: Vec<SubstepRecord>,
    /// Relative to the run directory.
    pub checkpoint: String,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ManifestLine {
    Plan { seed: u64, plan: Plan },
    Step(StepRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub plan: Plan,
    pub steps: Vec<StepRecord>,
}

impl RunManifest {
    /// The manifest with wall-clock fields zeroed, for comparisons.
    pub fn without_timing(&self) -> Self {
        let mut m = self.clone();
        m.steps.iter_mut().for_each(|s| s.wall_ms = 0);
        m
    }
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, PipelineError> {
    let text = fs::read_to_string(path).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })?;
    let bad = |line: usize, message: String| PipelineError::Manifest { path: path.to_path_buf(), line, message };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (seed, plan) = match lines.next() {
        Some((i, l)) => match serde_json::from_str(l).map_err(|e| bad(i + 1, e.to_string()))? {
            ManifestLine::Plan { seed, plan } => (seed, plan),
            ManifestLine::Step(_) => return Err(bad(i + 1, "first record must be the plan".into())),
        },
        None => return Err(bad(1, "empty manifest".into())),
    };
    let mut steps = Vec::new();
    for (i, l) in lines {
        match serde_json::from_str(l).map_err(|e| bad(i + 1, e.to_string()))? {
            ManifestLine::Step(s) => steps.push(s),
            ManifestLine::Plan { .. } => return Err(bad(i + 1, "second plan record".into())),
        }
    }
    Ok(RunManifest { seed, plan, steps })
}

fn append(path: &Path, line: &ManifestLine) -> Result<(), PipelineError> {
    let io = |source| PipelineError::Io { path: path.to_path_buf(), source };
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    let mut s = serde_json::to_string(line).expect("manifest records serialize");
    s.push('\n');
    f.write_all(s.as_bytes()).map_err(io)
}

/// Per-substep seed, mixed from the run seed and the substep id.
fn substep_seed(seed: u64, id: &str) -> u64 {
    let h = id.bytes().fold(0xcbf29ce484222325u64, |a, b| (a ^ b as u64).wrapping_mul(0x100000001b3));
    seed.wrapping_mul(0x9E3779B97F4A7C15) ^ h
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Continue after the last completed step of an existing manifest.
    pub resume: bool,
}

struct Ctx<'a> {
    plan: &'a Plan,
    registry: &'a DataRegistry,
    feats: FixtureFeatures,
}

impl Ctx<'_> {
    /// Trains `stage` on a copy of `model`.
    fn substep(&self, stage: &StagePlan, model: &Model, seed: u64) -> Result<(Model, SubstepRecord), PipelineError> {
        let cfg = self.plan.model;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut datasets = Vec::with_capacity(stage.data.len());
        for (name, roles) in &stage.data {
            let samples = self
                .registry
                .get(name)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| PipelineError::MissingDataset { step: stage.id.to_string(), name: name.clone() })?;
            datasets.push((samples, roles));
        }
        let groups = stage
            .trainable
            .iter()
            .map(|&c| {
                let lr = if c == Component::Head { stage.hyper.llm_lr.unwrap_or(0.0) } else { stage.hyper.visual_lr };
                let opt = AdamWConfig {
                    lr,
                    weight_decay: stage.hyper.weight_decay,
                    schedule: stage.hyper.schedule(),
                    ..AdamWConfig::default()
                };
                (c, opt)
            })
            .collect();
        let mut trainer = Trainer::with_groups(model.clone(), LossConfig::default(), groups);
        let mut losses = Vec::with_capacity(stage.hyper.updates as usize);
        for _ in 0..stage.hyper.updates {
            let (samples, roles) = datasets[rng.gen_range(0..datasets.len())];
            let sample = &samples[rng.gen_range(0..samples.len())];
            trainer.loss = LossConfig {
                terms: stage.terms.iter().copied().filter(|t| supports(roles, *t, stage.psg_features)).collect(),
                psg_features: stage.psg_features,
                weights: self.plan.weights,
                ..LossConfig::default()
            };
            let batch = batch_for(sample, roles, &self.feats, &self.registry.predicates, &cfg)?;
            let report = trainer.train_step(&batch).map_err(|e| match e {
                TranscendError::NonFinite(m) => PipelineError::NonFinite { step: stage.id.to_string(), detail: m },
                other => other.into(),
            })?;
            losses.push(report.loss);
        }
        Ok((trainer.into_model(), SubstepRecord { id: stage.id.to_string(), seed, losses }))
    }

    /// One numbered step. Step-2 subprocesses all start from `model` and
    /// their trained components are merged afterwards.
    fn step(
        &self,
        stages: &[&StagePlan],
        model: &Model,
        seed: u64,
    ) -> Result<(Model, Vec<SubstepRecord>), PipelineError> {
        let results: Vec<_> = stages
            .par_iter()
            .map(|stage| {
                let mut start = model.clone();
                if stage.init_dte_from_rte {
                    init_from(&mut start.dte, &model.rte)?;
                }
                self.substep(stage, &start, substep_seed(seed, stage.id.as_str()))
            })
            .collect::<Result<_, _>>()?;
        let mut merged = model.clone();
        let mut records = Vec::with_capacity(results.len());
        for (stage, (trained, record)) in stages.iter().zip(results) {
            for &c in &stage.trainable {
                *merged.params_mut(c) = trained.params(c).clone();
            }
            records.push(record);
        }
        Ok((merged, records))
    }
}

fn checkpoint_name(major: u8) -> String {
    format!("step-{major}.ckpt")
}

/// Executes `plan` in `out`, writing `manifest.jsonl` and one checkpoint per
/// numbered step. On a non-finite loss the run stops; the manifest then
/// holds the completed steps.
pub fn run(
    plan: &Plan,
    registry: &DataRegistry,
    seed: u64,
    out: &Path,
    opts: &RunOptions,
) -> Result<RunManifest, PipelineError> {
    let violations = validate_plan(plan);
    if has_errors(&violations) {
        return Err(PipelineError::InvalidPlan(violations));
    }
    for v in &violations {
        log::warn!("{v}");
    }
    fs::create_dir_all(out).map_err(|source| PipelineError::Io { path: out.to_path_buf(), source })?;
    let manifest_path = out.join(MANIFEST_FILE);

    let mut manifest = RunManifest { seed, plan: plan.clone(), steps: Vec::new() };
    let mut model = Model::new(plan.model, seed)?;
    if opts.resume && manifest_path.exists() {
        let prev = read_manifest(&manifest_path)?;
        if prev.seed != seed || prev.plan != *plan {
            return Err(PipelineError::ResumeMismatch);
        }
        if let Some(last) = prev.steps.last() {
            model = read_checkpoint(&out.join(&last.checkpoint))?;
        }
        manifest = prev;
        log::info!("resuming after {} completed steps", manifest.steps.len());
    } else {
        let _ = fs::remove_file(&manifest_path);
        append(&manifest_path, &ManifestLine::Plan { seed, plan: plan.clone() })?;
    }

    let ctx = Ctx { plan, registry, feats: FixtureFeatures::new(plan.patch, plan.model.dim, plan.feature_seed) };
    for major in plan.majors().into_iter().skip(manifest.steps.len()) {
        let started = Instant::now();
        let stages: Vec<&StagePlan> = plan.steps.iter().filter(|s| s.id.major() == major).collect();
        log::info!("step {major}: {} substep(s)", stages.len());
        let (next, substeps) = ctx.step(&stages, &model, seed)?;
        model = next;
        let checkpoint = checkpoint_name(major);
        write_checkpoint(&out.join(&checkpoint), &model)?;
        let record = StepRecord { step: major, substeps, checkpoint, wall_ms: started.elapsed().as_millis() as u64 };
        append(&manifest_path, &ManifestLine::Step(record.clone()))?;
        manifest.steps.push(record);
    }
    Ok(manifest)
}

/// Checkpoint paths of a manifest, resolved against `out`.
pub fn checkpoint_paths(manifest: &RunManifest, out: &Path) -> Vec<PathBuf> {
    manifest.steps.iter().map(|s| out.join(&s.checkpoint)).collect()
}
