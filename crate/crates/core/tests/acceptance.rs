//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit when any
//! fails.

mod common;

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::Rng;

use common::oracle::{self, OracleConfig};
use common::{perturbed, random_scene, rng};
use psg4d_core::inference::prompt::{EXAMPLES, STAGE_HEADERS};
use psg4d_core::inference::{
    build_prompt, run_pipeline, split_sections, InferenceConfig, MockBackend, PromptStage, SceneDescriptor,
};
use psg4d_core::io::{generate_synthetic, parse_document, render_document, AnnotationDocument, SynthConfig};
use psg4d_core::mask::{dice_loss, iou_loss, tube_iou, MaskTube, SoftMaskTube, DICE_SMOOTH};
use psg4d_core::metrics::{parse_report, recall_at_k, EvalSample, MatchConfig};
use psg4d_core::model::SceneGraph4D;
use psg4d_core::pipeline::{
    checkpoint_paths, default_plan, run, validate_plan, without_step, DataRegistry, RunOptions,
};
use psg4d_core::transcend::{
    check_model_gradients, evaluate, random_batch, temporal_rollout, total_loss, Component, FeatureGrid,
    FeatureSequence, LossComponents, LossConfig, Model, ModelConfig, PsgFeatures, Regression, TemporalEstimator,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn samples(data: &[(SceneGraph4D, SceneGraph4D)]) -> Vec<EvalSample> {
    data.iter()
        .enumerate()
        .map(|(i, (p, g))| EvalSample { video_id: format!("v{i:03}"), pred: p.clone(), gold: g.clone() })
        .collect()
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let cfg = SynthConfig {
        seed: 2024,
        videos: 100,
        max_objects: 5,
        max_relations: 10,
        label_noise: 0.25,
        mask_jitter: 0.3,
        span_jitter: 0.15,
        spurious: 1.0,
        ..SynthConfig::default()
    };
    let videos = generate_synthetic(&cfg).map_err(|e| e.to_string())?;
    let data: Vec<_> = videos.iter().map(|v| (v.pred.clone(), v.gold.clone())).collect();
    check(data.iter().all(|(_, g)| g.relations.len() <= 10), "more than 10 gold relations")?;
    let ks = [20, 50, 100];
    let mut compared = 0;
    let mut r20 = Vec::new();
    for viou in [0.3, 0.5, 0.7] {
        let mc = MatchConfig { viou_threshold: viou, ks: ks.to_vec(), ..MatchConfig::default() };
        let lib = recall_at_k(&samples(&data), &mc).map_err(|e| e.to_string())?;
        let want = oracle::evaluate(&data, &OracleConfig { viou, temporal_iou: 0.0, grounded: true }, &ks);
        check(lib.recall == want.recall, format!("R@K differs at vIoU {viou}: {:?} vs {:?}", lib.recall, want.recall))?;
        check(
            lib.mean_recall == want.mean_recall,
            format!("mR@K differs at vIoU {viou}: {:?} vs {:?}", lib.mean_recall, want.mean_recall),
        )?;
        compared += 2 * ks.len();
        r20.push(format!("{:.1}", want.recall[&20]));
    }
    let took = start.elapsed();
    check(took < Duration::from_secs(10), format!("took {took:?}"))?;
    Ok(format!("{compared} values equal over 100 videos in {took:.2?} (R@20 by vIoU: {})", r20.join("/")))
}

fn monotonicity() -> Outcome {
    let mut r = rng(77);
    let mut violations = 0;
    for _ in 0..1000 {
        let dims = (r.gen_range(1..=3), r.gen_range(1..=4), r.gen_range(1..=4));
        let objects = r.gen_range(2..=6);
        let rels = r.gen_range(1..=8);
        let gold = random_scene(&mut r, dims, objects, rels);
        let n = r.gen_range(0..=120);
        let data = vec![(perturbed(&mut r, &gold, n), gold)];
        let mut prev: Option<Vec<f64>> = None;
        for viou in [0.0, 0.3, 0.5, 0.7, 1.0] {
            let mc = MatchConfig { viou_threshold: viou, ks: vec![20, 50, 100], ..MatchConfig::default() };
            let rep = recall_at_k(&samples(&data), &mc).map_err(|e| e.to_string())?;
            let cur: Vec<f64> = rep.recall.values().copied().collect();
            violations += cur.windows(2).filter(|w| w[0] > w[1]).count();
            if let Some(p) = &prev {
                violations += p.iter().zip(&cur).filter(|(a, b)| b > a).count();
            }
            prev = Some(cur);
        }
    }
    check(violations == 0, format!("{violations} violations"))?;
    Ok("1000 cases, zero violations".into())
}

fn transcript_fidelity() -> Outcome {
    let mut counts = Vec::new();
    for (i, text) in EXAMPLES[..2].iter().enumerate() {
        let script: Vec<String> = split_sections(text)
            .stages
            .into_iter()
            .map(|s| s.ok_or(format!("example {} lacks a stage", i + 1)))
            .collect::<Result<_, _>>()?;
        let backend = MockBackend::new(script);
        let t = run_pipeline(&SceneDescriptor::new("ex", 1.0), &backend, &InferenceConfig::default(), None)
            .map_err(|e| e.to_string())?;
        check(t.warnings.is_empty(), format!("example {}: {:?}", i + 1, t.warnings))?;
        counts.push((t.stage2.len(), t.stage3.len(), t.final_output.len()));
    }
    check(counts[0].2 == 4, format!("example 1 final {:?}", counts[0]))?;
    check(counts[1] == (6, 7, 7), format!("example 2 pairs/triplets/final {:?}", counts[1]))?;
    Ok(format!("example 1: {} quintuples; example 2: {:?}; no warnings", counts[0].2, counts[1]))
}

fn prompt_fidelity() -> Outcome {
    let p = build_prompt(PromptStage::Full, &SceneDescriptor::new("v", 10.0), &[], 2).map_err(|e| e.to_string())?;
    let mut at = 0;
    for h in STAGE_HEADERS {
        let pos = p[at..].find(h).ok_or(format!("{h:?} missing or out of order"))?;
        at += pos + h.len();
    }
    check(STAGE_HEADERS[3] == "Inference stage 4: Temporal Span Determination", "stage 4 header text")?;
    Ok("four headers verbatim and in order".into())
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (regression, features) in [(Regression::Mse, PsgFeatures::Transcended), (Regression::Cosine, PsgFeatures::Gold)]
    {
        let mc = ModelConfig { dim: 8, layers: 1, heads: 2, ff_mult: 2, steps: 2, vocab: 5, regression };
        let model = Model::new(mc, 0).map_err(|e| e.to_string())?;
        let batch = random_batch(&mc, 4, 1);
        let lc = LossConfig { psg_features: features, ..LossConfig::default() };
        let r = check_model_gradients(&model, &batch, &lc, &Component::ALL, 1e-5).map_err(|e| e.to_string())?;
        worst = worst.max(r.max_rel_error);
        checked += r.checked;
    }
    let took = start.elapsed();
    check(worst < 1e-4, format!("max relative error {worst:.3e}"))?;
    check(took < Duration::from_secs(60), format!("took {took:?}"))?;
    Ok(format!("max relative error {worst:.2e} over {checked} parameters in {took:.2?}"))
}

fn causality() -> Outcome {
    let mut r = rng(5);
    let mut cases = 0;
    for steps in 1..=8 {
        let cfg = ModelConfig { dim: 8, layers: 2, heads: 2, steps, ..ModelConfig::default() };
        let f = TemporalEstimator::new(&cfg, &mut r);
        let cond = FeatureGrid::new(2, 2, 8, (0..32).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
        let teacher = FeatureSequence::new(steps, 8, (0..steps * 8).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
        let base = temporal_rollout(&f, &cond, steps, Some(&teacher)).map_err(|e| e.to_string())?;
        for j in 0..steps {
            let mut p = teacher.clone();
            for v in &mut p.values.data[(j + 1) * 8..] {
                *v += r.gen_range(-5.0..5.0);
            }
            let out = temporal_rollout(&f, &cond, steps, Some(&p)).map_err(|e| e.to_string())?;
            let keep = (j + 1) * 8;
            check(
                out.values.data[..keep].iter().zip(&base.values.data[..keep]).all(|(a, b)| a.to_bits() == b.to_bits()),
                format!("S={steps}: step {j} changed"),
            )?;
            cases += 1;
        }
    }
    Ok(format!("{cases} (S, j) pairs bit-invariant"))
}

fn tube(f: usize, h: usize, w: usize, on: &[(usize, usize, usize)]) -> MaskTube {
    let mut v = vec![false; f * h * w];
    for &(t, y, x) in on {
        v[(t * h + y) * w + x] = true;
    }
    MaskTube::from_dense(f, h, w, &v).unwrap()
}

fn loss_identities() -> Outcome {
    let a = tube(2, 2, 2, &[(0, 0, 0), (0, 0, 1)]);
    let b = tube(2, 2, 2, &[(0, 0, 1), (1, 0, 1)]);
    let pa = SoftMaskTube::from_tube(&a).unwrap();
    let iou_exact = iou_loss(&pa, &a).unwrap().value;
    check(iou_exact == 0.0, format!("iou_loss on exact match {iou_exact}"))?;
    let dice = dice_loss(&pa, &b, DICE_SMOOTH).unwrap().value;
    check((dice - 0.6).abs() < 1e-12, format!("dice {dice}"))?;
    let iou = tube_iou(&a, &b).unwrap();
    check((iou - 1.0 / 3.0).abs() < 1e-15, format!("tube_iou {iou}"))?;
    let mc = ModelConfig { dim: 8, layers: 1, heads: 2, ff_mult: 2, steps: 2, vocab: 5, regression: Regression::Mse };
    let model = Model::new(mc, 3).map_err(|e| e.to_string())?;
    let lc = LossConfig::default();
    let (c, total): (LossComponents, f64) =
        evaluate(&model, &random_batch(&mc, 4, 9), &lc).map_err(|e| e.to_string())?;
    check(total == total_loss(&c, &lc.weights), "total differs from weighted sum")?;
    let plain: f64 = c.as_array().iter().fold(0.0, |acc, v| acc + v);
    check(total == plain, format!("total {total} vs component sum {plain}"))?;
    Ok(format!("iou_loss 0, dice {dice}, tube_iou {iou:.6}, total == sum"))
}

fn orchestration() -> Outcome {
    let plan = default_plan();
    let violations = validate_plan(&plan);
    check(violations.is_empty(), format!("{violations:?}"))?;
    let reg = DataRegistry::toy(0, 4).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = run(&plan, &reg, 1, a.path(), &RunOptions::default()).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    check(took < Duration::from_secs(300), format!("took {took:?}"))?;
    let mb = run(&plan, &reg, 1, b.path(), &RunOptions::default()).map_err(|e| e.to_string())?;
    check(ma.without_timing() == mb.without_timing(), "manifests differ on rerun")?;
    let (ca, cb) = (checkpoint_paths(&ma, a.path()), checkpoint_paths(&mb, b.path()));
    check(ca.len() == cb.len() && !ca.is_empty(), "checkpoint sets differ")?;
    for (x, y) in ca.iter().zip(&cb) {
        check(std::fs::read(x).unwrap() == std::fs::read(y).unwrap(), format!("{} differs", x.display()))?;
    }
    let mut ablated = Vec::new();
    for m in [2, 3] {
        let dir = tempfile::tempdir().unwrap();
        let man =
            run(&without_step(&plan, m), &reg, 1, dir.path(), &RunOptions::default()).map_err(|e| e.to_string())?;
        check(man.steps.len() == 4, format!("w/o step {m}: {} steps", man.steps.len()))?;
        ablated.push(man.steps.len());
    }
    Ok(format!("{} steps in {took:.2?}, bit-identical rerun, ablations {ablated:?} steps", ma.steps.len()))
}

fn round_trips() -> Outcome {
    let mut r = rng(99);
    for i in 0..1000 {
        let dims = (r.gen_range(1..=4), r.gen_range(1..=6), r.gen_range(1..=6));
        let objects = r.gen_range(0..=6);
        let rels = r.gen_range(0..=8);
        let scene = random_scene(&mut r, dims, objects, rels);
        let doc = AnnotationDocument::from_scene(format!("v{i}"), r.gen_range(0.5..60.0), dims, &scene);
        let back = parse_document(&render_document(&doc), Path::new("mem.json")).map_err(|e| e.to_string())?;
        check(back == doc && back.to_scene().as_ref() == Ok(&scene), format!("document {i}"))?;

        let (t, h, w) = (r.gen_range(1..=8), r.gen_range(1..=8), r.gen_range(1..=8));
        let density = r.gen_range(0.0..=1.0);
        let v: Vec<bool> = (0..t * h * w).map(|_| r.gen_bool(density)).collect();
        let m = MaskTube::from_dense(t, h, w, &v).unwrap();
        check(m.to_dense().unwrap() == v, format!("mask {i}"))?;
        check(MaskTube::from_runs(h, w, m.runs().to_vec()).as_ref() == Ok(&m), format!("runs {i}"))?;
    }
    Ok("1000 documents and 1000 masks, zero failures".into())
}

fn end_to_end() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_psg4d");
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("example2.txt");
    std::fs::write(&script, EXAMPLES[1]).unwrap();
    let transcript = dir.path().join("rail.transcript.json");
    let docs = dir.path().join("docs");
    std::fs::create_dir(&docs).unwrap();
    let doc = docs.join("rail.json");
    let o = Command::new(bin)
        .args(["infer", "--scene", "rail", "--duration", "12", "--backend", "mock"])
        .arg("--script")
        .arg(&script)
        .arg("--out")
        .arg(&transcript)
        .arg("--document")
        .arg(&doc)
        .output()
        .map_err(|e| e.to_string())?;
    check(o.status.success(), format!("infer: {}", String::from_utf8_lossy(&o.stderr)))?;
    let o = Command::new(bin)
        .arg("eval")
        .arg("--gold")
        .arg(&docs)
        .arg("--pred")
        .arg(&docs)
        .arg("--ungrounded")
        .arg("--transcript")
        .arg(&transcript)
        .output()
        .map_err(|e| e.to_string())?;
    check(o.status.success(), format!("eval: {}", String::from_utf8_lossy(&o.stderr)))?;
    let rep = parse_report(&String::from_utf8_lossy(&o.stdout)).map_err(|e| e.to_string())?;
    let (r20, s4) = (rep.get("R@20"), rep.get("stage4/R@20"));
    check(r20 == Some(100.0) && s4 == Some(100.0), format!("R@20 {r20:?}, stage 4 {s4:?}"))?;
    Ok("R@20 = 100, stage-4 recall = 100".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("metrics oracle equivalence", oracle_equivalence),
        ("monotonicity", monotonicity),
        ("transcript fidelity", transcript_fidelity),
        ("prompt fidelity", prompt_fidelity),
        ("gradient fidelity", gradient_fidelity),
        ("causality", causality),
        ("loss identities", loss_identities),
        ("orchestration", orchestration),
        ("round trips", round_trips),
        ("end-to-end mock inference", end_to_end),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
