use std::collections::BTreeMap;
use std::io::Read as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{CliError, Config, EvalArgs, GradcheckArgs, InferArgs, ParseArgs, StatsArgs, SynthArgs, TrainArgs};
use crate::inference::{
    parse_output_sequence, parse_stage, run_pipeline, split_sections, CallMode, HttpBackend, HttpConfig,
    InferenceTranscript, MockBackend, SceneDescriptor, StageOutput, TextBackend,
};
use crate::io::{
    dataset_stats, generate_synthetic, load_document_dir, save_document, write_synthetic, AnnotationDocument,
    SynthError,
};
use crate::metrics::{
    recall_at_k, split_report, stage_metrics, write_report, EvalSample, LabelFrequencies, MatchConfig, ReportFile,
    Vocabulary,
};
use crate::model::SceneGraph4D;
use crate::pipeline::{default_plan, run, toy_plan, DataRegistry, Plan, RunOptions, MANIFEST_FILE};
use crate::transcend::{
    check_model_gradients, random_batch, Component, LossConfig, Model, ModelConfig, PsgFeatures, Regression,
};

/// Gradient checks fail at or above this relative error.
const GRAD_TOLERANCE: f64 = 1e-4;

/// Writes to stdout; a closed pipe is not an error.
fn emit(text: &str) -> Result<(), CliError> {
    use std::io::Write as _;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Operational(format!("stdout: {e}"))),
        _ => Ok(()),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::Operational(format!("{}: {e}", parent.display())))?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("plain data serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Operational(format!("{}: {e}", path.display())))
}

fn scene_of(doc: &AnnotationDocument, ranked: bool) -> Result<SceneGraph4D, CliError> {
    let r = if ranked { doc.to_ranked_scene() } else { doc.to_scene() };
    r.map_err(|(field, message)| CliError::Input(format!("{}: {field}: {message}", doc.video_id)))
}

fn by_video(docs: Vec<AnnotationDocument>, dir: &Path) -> Result<BTreeMap<String, AnnotationDocument>, CliError> {
    let mut out = BTreeMap::new();
    for d in docs {
        let id = d.video_id.clone();
        if out.insert(id.clone(), d).is_some() {
            return Err(CliError::Input(format!("{}: duplicate video_id {id:?}", dir.display())));
        }
    }
    Ok(out)
}

fn match_config(a: &EvalArgs, cfg: &Config) -> Result<MatchConfig, CliError> {
    let mut m = cfg.matching.clone();
    if let Some(k) = &a.k {
        m.ks = k.clone();
    }
    if let Some(v) = a.viou {
        m.viou_threshold = v;
    }
    if let Some(t) = a.temporal_iou {
        m.temporal_iou_threshold = t;
    }
    if a.ungrounded {
        m.grounded = false;
    }
    m.validate().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(m)
}

pub fn eval(a: &EvalArgs, cfg: &Config) -> Result<(), CliError> {
    let mcfg = match_config(a, cfg)?;
    let gold = by_video(load_document_dir(&a.gold)?, &a.gold)?;
    let mut pred = by_video(load_document_dir(&a.pred)?, &a.pred)?;
    let mut samples = Vec::with_capacity(gold.len());
    for (id, g) in &gold {
        let p = match pred.remove(id) {
            Some(p) => scene_of(&p, true)?,
            None => {
                log::warn!("no prediction for {id}; scored as empty");
                SceneGraph4D::default()
            }
        };
        samples.push(EvalSample { video_id: id.clone(), pred: p, gold: scene_of(g, false)? });
    }
    for id in pred.keys() {
        log::warn!("prediction {id} has no gold document; ignored");
    }

    let compute = || recall_at_k(&samples, &mcfg);
    let report = match a.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Operational(e.to_string()))?
            .install(compute),
        None => compute(),
    }
    .map_err(|e| CliError::Input(e.to_string()))?;

    let mut file = ReportFile::default();
    file.push("videos", samples.len() as f64);
    file.add_eval(&report);
    if a.vocab.is_some() || a.freq.is_some() {
        let vocab: Option<Vocabulary> = a.vocab.as_deref().map(read_json).transpose()?;
        let freq: Option<LabelFrequencies> = a.freq.as_deref().map(read_json).transpose()?;
        file.add_splits(&split_report(&samples, vocab.as_ref(), freq.as_ref(), &mcfg));
    }
    if let Some(path) = &a.transcript {
        let t: InferenceTranscript = read_json(path)?;
        let g = samples
            .iter()
            .find(|s| s.video_id == t.video_id)
            .ok_or_else(|| CliError::Input(format!("{}: no gold video {:?}", path.display(), t.video_id)))?;
        file.add_stages(&stage_metrics(&t, &g.gold, &mcfg));
    }
    match &a.report {
        Some(path) => write_report(path, &file).map_err(|e| CliError::Operational(format!("{}: {e}", path.display()))),
        None => emit(&file.render()),
    }
}

fn scene_descriptor(a: &InferArgs) -> Result<SceneDescriptor, CliError> {
    let path = Path::new(&a.scene);
    if path.is_file() {
        read_json(path)
    } else {
        Ok(SceneDescriptor::new(a.scene.clone(), a.duration))
    }
}

/// Mock responses from a script file: a JSON array of strings, a
/// stage-annotated text (one response per stage), or a single raw response.
fn load_script(path: &Path, mode: CallMode) -> Result<Vec<String>, CliError> {
    let text = read_text(path)?;
    if let Ok(list) = serde_json::from_str::<Vec<String>>(&text) {
        return Ok(list);
    }
    if mode == CallMode::FourCalls {
        let sections = split_sections(&text);
        if sections.stages.iter().all(Option::is_some) {
            return Ok(sections.stages.into_iter().flatten().collect());
        }
    }
    Ok(vec![text])
}

fn sibling_document(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "transcript".into());
    out.with_file_name(format!("{stem}.annotation.json"))
}

pub fn infer(a: &InferArgs, cfg: &Config) -> Result<(), CliError> {
    let scene = scene_descriptor(a)?;
    let mut icfg = cfg.inference.clone();
    if let Some(n) = a.examples {
        icfg.examples = n;
    }
    if let Some(m) = a.mode {
        icfg.mode = m.into();
    }
    let backend: Box<dyn TextBackend> = match a.backend {
        super::BackendKind::Mock => {
            let script = a.script.as_deref().ok_or_else(|| CliError::Input("--backend mock needs --script".into()))?;
            Box::new(MockBackend::new(load_script(script, icfg.mode)?))
        }
        super::BackendKind::Http => {
            let mut h: HttpConfig = cfg.backend.clone();
            if let Some(e) = &a.endpoint {
                h.endpoint = e.clone();
            }
            Box::new(HttpBackend::new(h))
        }
    };
    let transcript = match run_pipeline(&scene, backend.as_ref(), &icfg, None) {
        Ok(t) => t,
        Err(e) => {
            if let Some(partial) = e.partial() {
                write_json(&a.out, partial)?;
            }
            let hint = if e.is_retriable() { " (retriable)" } else { "" };
            return Err(match e {
                crate::inference::InferenceError::Prompt(p) => CliError::Input(p.to_string()),
                other => CliError::Operational(format!("{other}{hint}")),
            });
        }
    };
    for w in &transcript.warnings {
        log::warn!("{w}");
    }
    write_json(&a.out, &transcript)?;
    let doc = AnnotationDocument::from_scene(
        scene.video_id.clone(),
        scene.duration,
        (scene.frames, scene.height, scene.width),
        &transcript.graph,
    );
    let doc_path = a.document.clone().unwrap_or_else(|| sibling_document(&a.out));
    save_document(&doc_path, &doc)?;
    emit(&format!(
        "{}: {} objects, {} quintuples, {} warnings\n",
        scene.video_id,
        transcript.stage1.len(),
        transcript.final_output.len(),
        transcript.warnings.len()
    ))
}

fn stage_json(out: StageOutput) -> serde_json::Value {
    let v = match out {
        StageOutput::Objects(v) => serde_json::to_value(v),
        StageOutput::Pairs(v) => serde_json::to_value(v),
        StageOutput::Triplets(v) => serde_json::to_value(v),
        StageOutput::Quintuples(v) => serde_json::to_value(v),
    };
    v.expect("parsed items serialize")
}

pub fn parse(a: &ParseArgs) -> Result<(), CliError> {
    let mut text = String::new();
    std::io::stdin().read_to_string(&mut text).map_err(|e| CliError::Input(format!("stdin: {e}")))?;
    let (items, warnings) = match a.what.stage {
        Some(stage) => {
            let (out, warnings) = parse_stage(stage, &text).map_err(|e| CliError::Input(e.to_string()))?;
            (stage_json(out), warnings)
        }
        None => {
            let seq = parse_output_sequence(&text, &[]);
            let triggers = seq.trigger_positions();
            let items = serde_json::json!({ "clauses": seq.clauses, "triggers": triggers });
            (items, seq.warnings)
        }
    };
    for w in &warnings {
        log::warn!("{w}");
    }
    let doc = serde_json::json!({ "items": items, "warnings": warnings });
    emit(&(serde_json::to_string_pretty(&doc).expect("json values serialize") + "\n"))
}

pub fn synth(a: &SynthArgs, cfg: &Config) -> Result<(), CliError> {
    let mut s = cfg.synthesis.clone();
    if let Some(seed) = a.seed {
        s.seed = seed;
    }
    if let Some(n) = a.videos {
        s.videos = n;
    }
    let videos = generate_synthetic(&s).map_err(|SynthError::Config(m)| CliError::Input(m))?;
    write_synthetic(&a.out, &videos)?;
    emit(&format!("wrote {} videos to {}\n", videos.len(), a.out.display()))
}

fn load_plan(arg: &str) -> Result<Plan, CliError> {
    match arg {
        "builtin:default" => Ok(default_plan()),
        "builtin:toy" => Ok(toy_plan()),
        path => {
            let path = Path::new(path);
            Plan::from_toml(&read_text(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
        }
    }
}

pub fn train(a: &TrainArgs, cfg: &Config) -> Result<(), CliError> {
    let plan = load_plan(&a.plan)?;
    let seed = a.seed.or(cfg.training.seed).unwrap_or(plan.seed);
    let videos = a.videos.unwrap_or(cfg.training.videos);
    let registry =
        DataRegistry::toy(cfg.training.data_seed, videos).map_err(|SynthError::Config(m)| CliError::Input(m))?;
    let manifest = run(&plan, &registry, seed, &a.out, &RunOptions { resume: a.resume })?;
    for step in &manifest.steps {
        let parts: Vec<String> = step
            .substeps
            .iter()
            .map(|s| match (s.losses.first(), s.losses.last()) {
                (Some(first), Some(last)) => format!("{} {first:.6} -> {last:.6}", s.id),
                _ => format!("{} (no updates)", s.id),
            })
            .collect();
        emit(&format!("step {}: {}\n", step.step, parts.join(", ")))?;
    }
    emit(&format!("manifest: {}\n", a.out.join(MANIFEST_FILE).display()))
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<(), CliError> {
    let [dim, grid, steps, layers] = a.dims[..] else {
        return Err(CliError::Input(format!("--dims takes DIM,GRID,STEPS,LAYERS, got {:?}", a.dims)));
    };
    if grid == 0 {
        return Err(CliError::Input("grid must be positive".into()));
    }
    let mut worst = 0.0f64;
    for (regression, features) in [(Regression::Mse, PsgFeatures::Transcended), (Regression::Cosine, PsgFeatures::Gold)]
    {
        let mc = ModelConfig { dim, layers, heads: a.heads, ff_mult: a.ff_mult, steps, vocab: a.vocab, regression };
        let model = Model::new(mc, a.seed)?;
        let batch = random_batch(&mc, grid, a.seed.wrapping_add(1));
        let lc = LossConfig { psg_features: features, ..LossConfig::default() };
        let r = check_model_gradients(&model, &batch, &lc, &Component::ALL, a.step)?;
        emit(&format!(
            "{regression:?}/{features:?}: max relative error {:.3e} over {} parameters (worst index {})\n",
            r.max_rel_error, r.checked, r.worst
        ))?;
        worst = if r.max_rel_error.is_nan() { f64::NAN } else { worst.max(r.max_rel_error) };
    }
    if worst.is_nan() || worst >= GRAD_TOLERANCE {
        return Err(CliError::Operational(format!("gradient check failed: {worst:.3e} >= {GRAD_TOLERANCE:e}")));
    }
    Ok(())
}

pub fn stats(a: &StatsArgs) -> Result<(), CliError> {
    let s = dataset_stats(&load_document_dir(&a.input)?);
    if let Some(p) = &a.vocab_out {
        write_json(p, &s.vocabulary())?;
    }
    if let Some(p) = &a.freq_out {
        write_json(p, &s.frequencies())?;
    }
    emit(&(serde_json::to_string_pretty(&s).expect("stats serialize") + "\n"))
}
