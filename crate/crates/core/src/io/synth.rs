//! Seeded synthetic 4D scenes with exact gold and bookkept noisy predictions.
//!
//! Every object in a video gets a distinct category and every ordered object
//! pair at most one gold relation, so a prediction can only ever match the
//! gold relation it was derived from. That makes the expected recall a
//! closed-form function of the recorded corruptions.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::document::{save_document, AnnotationDocument};
use super::frames::save_frames;
use super::stats::dataset_stats;
use super::IoError;
use crate::mask::{tube_iou, MaskTube};
use crate::metrics::MatchConfig;
use crate::model::{DepthFrame, ObjectInstance, RgbFrame, RgbdSequence, SceneGraph4D, Span, TimedRelation};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("synth config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub videos: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Seconds.
    pub duration: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    pub categories: Vec<String>,
    pub predicates: Vec<String>,
    /// Probability that an ordered object pair carries a gold relation.
    pub relation_density: f64,
    pub max_relations: usize,
    /// Fraction of gold relations whose predicted predicate is swapped.
    pub label_noise: f64,
    /// Fraction of objects whose predicted tube is shifted sideways.
    pub mask_jitter: f64,
    /// Largest shift of a predicted span endpoint, as a duration fraction.
    pub span_jitter: f64,
    /// Spurious predictions inserted per gold relation, on unrelated pairs.
    pub spurious: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let words = |s: &[&str]| s.iter().map(|w| w.to_string()).collect();
        Self {
            seed: 0,
            videos: 8,
            frames: 8,
            height: 8,
            width: 8,
            duration: 4.0,
            min_objects: 2,
            max_objects: 4,
            categories: words(&[
                "person", "ball", "cup", "table", "chair", "dog", "car", "bottle", "laptop", "bag", "box", "door",
            ]),
            predicates: words(&["holding", "looking at", "next to", "on", "touching", "kicking", "carrying", "behind"]),
            relation_density: 0.5,
            max_relations: 10,
            label_noise: 0.0,
            mask_jitter: 0.0,
            span_jitter: 0.0,
            spurious: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.videos == 0 || self.frames == 0 || self.max_relations == 0 {
            return bad("videos, frames and max_relations must be positive".into());
        }
        if self.height < 2 || self.width < 2 {
            return bad(format!("frames of {}x{} are too small", self.height, self.width));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        if self.min_objects < 2 || self.min_objects > self.max_objects {
            return bad(format!("object range {}..={} needs 2 <= min <= max", self.min_objects, self.max_objects));
        }
        if self.max_objects > self.categories.len() {
            return bad(format!(
                "{} categories cannot label {} distinct objects",
                self.categories.len(),
                self.max_objects
            ));
        }
        if self.predicates.len() < 2 {
            return bad("at least two predicates are needed".into());
        }
        for (name, v) in [
            ("relation_density", self.relation_density),
            ("label_noise", self.label_noise),
            ("mask_jitter", self.mask_jitter),
            ("span_jitter", self.span_jitter),
            ("spurious", self.spurious),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        for c in &self.categories {
            match crate::model::normalize_label(c) {
                Ok((n, None)) if n == *c => {}
                _ => return bad(format!("category {c:?} is not canonical")),
            }
        }
        Ok(())
    }
}

/// What happened to one gold relation on its way to the predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationFate {
    pub predicate: String,
    pub swapped: bool,
    /// 0-based position in the ranked predictions.
    pub rank: usize,
    pub subject_viou: f64,
    pub object_viou: f64,
    pub span_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoBookkeeping {
    pub video_id: String,
    /// One entry per gold relation, in gold order.
    pub fates: Vec<RelationFate>,
    pub spurious_ranks: Vec<usize>,
}

impl VideoBookkeeping {
    fn hits(&self, k: usize, cfg: &MatchConfig) -> impl Iterator<Item = (&RelationFate, bool)> + '_ {
        let cfg = cfg.clone();
        self.fates.iter().map(move |f| {
            let hit = !f.swapped
                && f.rank < k
                && (cfg.temporal_iou_threshold <= 0.0 || f.span_iou >= cfg.temporal_iou_threshold)
                && (!cfg.grounded || (f.subject_viou >= cfg.viou_threshold && f.object_viou >= cfg.viou_threshold));
            (f, hit)
        })
    }
}

/// Closed-form `(R@k, mR@k)` in percent, using the evaluator's conventions.
pub fn expected_recall(books: &[VideoBookkeeping], k: usize, cfg: &MatchConfig) -> (f64, f64) {
    let mut video_sum = 0.0;
    let mut videos = 0usize;
    let mut classes: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for b in books {
        let mut hits = 0;
        for (f, hit) in b.hits(k, cfg) {
            let e = classes.entry(crate::model::normalize_predicate(&f.predicate)).or_default();
            e.1 += 1;
            if hit {
                e.0 += 1;
                hits += 1;
            }
        }
        if !b.fates.is_empty() {
            video_sum += 100.0 * hits as f64 / b.fates.len() as f64;
            videos += 1;
        }
    }
    let r = if videos == 0 { 0.0 } else { video_sum / videos as f64 };
    let class_sum: f64 = classes.values().map(|&(h, t)| 100.0 * h as f64 / t as f64).sum();
    let mr = if classes.is_empty() { 0.0 } else { class_sum / classes.len() as f64 };
    (r, mr)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthVideo {
    pub seq: RgbdSequence,
    pub gold: SceneGraph4D,
    /// Relations in rank order.
    pub pred: SceneGraph4D,
    pub book: VideoBookkeeping,
}

impl SynthVideo {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.seq.frames(), self.seq.height(), self.seq.width())
    }

    pub fn gold_document(&self) -> AnnotationDocument {
        AnnotationDocument::from_scene(self.seq.video_id(), self.seq.duration(), self.dims(), &self.gold)
    }

    /// Predictions with confidences that decrease with rank.
    pub fn pred_document(&self) -> AnnotationDocument {
        let mut doc = AnnotationDocument::from_scene(self.seq.video_id(), self.seq.duration(), self.dims(), &self.pred);
        let n = doc.relations.len();
        for (i, r) in doc.relations.iter_mut().enumerate() {
            r.confidence = Some((n - i) as f64 / n as f64);
        }
        doc
    }
}

struct Track {
    size: (usize, usize),
    from: (f64, f64),
    to: (f64, f64),
}

impl Track {
    /// Top-left corner at frame `t` of `frames`.
    fn at(&self, t: usize, frames: usize) -> (usize, usize) {
        let a = if frames > 1 { t as f64 / (frames - 1) as f64 } else { 0.0 };
        let lerp = |p: f64, q: f64| (p + (q - p) * a).round() as usize;
        (lerp(self.from.0, self.to.0), lerp(self.from.1, self.to.1))
    }
}

fn box_tube(track: &Track, frames: usize, h: usize, w: usize, shift: usize) -> MaskTube {
    let mut dense = vec![false; frames * h * w];
    for t in 0..frames {
        let (y0, x0) = track.at(t, frames);
        for y in y0..y0 + track.size.0 {
            for x in x0 + shift..(x0 + track.size.1 + shift).min(w) {
                dense[(t * h + y) * w + x] = true;
            }
        }
    }
    MaskTube::from_dense(frames, h, w, &dense).expect("positive dims")
}

fn color(category: &str) -> [u8; 3] {
    let h = category.bytes().fold(2166136261u32, |a, b| (a ^ b as u32).wrapping_mul(16777619));
    [(h >> 16) as u8 | 0x40, (h >> 8) as u8 | 0x40, h as u8 | 0x40]
}

fn random_span(rng: &mut ChaCha8Rng, frames: usize) -> Span {
    let a = rng.gen_range(0..frames);
    let b = rng.gen_range(a + 1..=frames);
    Span::new(a as f64 / frames as f64, b as f64 / frames as f64)
}

fn count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).round() as usize).min(n)
}

fn video(cfg: &SynthConfig, rng: &mut ChaCha8Rng, index: usize) -> SynthVideo {
    let (t_n, h, w) = (cfg.frames, cfg.height, cfg.width);
    let video_id = format!("synth_{index:05}");
    let n = rng.gen_range(cfg.min_objects..=cfg.max_objects);
    let mut cats: Vec<&String> = cfg.categories.iter().collect();
    cats.shuffle(rng);

    let mut gold = SceneGraph4D::default();
    let mut tracks = Vec::with_capacity(n);
    for (k, cat) in cats.into_iter().take(n).enumerate() {
        let size = (rng.gen_range(1..=h / 2 + 1), rng.gen_range(1..=w / 2 + 1));
        let pos = |rng: &mut ChaCha8Rng| (rng.gen_range(0..=h - size.0) as f64, rng.gen_range(0..=w - size.1) as f64);
        let track = Track { size, from: pos(rng), to: pos(rng) };
        let id = k as u32 + 1;
        gold.objects.push(ObjectInstance::new(id, cat.clone()));
        gold.masks.insert(id, box_tube(&track, t_n, h, w, 0));
        tracks.push(track);
    }

    let mut pairs: Vec<(u32, u32)> =
        (1..=n as u32).flat_map(|s| (1..=n as u32).filter(move |&o| o != s).map(move |o| (s, o))).collect();
    pairs.shuffle(rng);
    let mut unrelated = Vec::new();
    for (s, o) in pairs {
        if gold.relations.len() < cfg.max_relations && rng.gen_bool(cfg.relation_density) {
            let predicate = cfg.predicates[rng.gen_range(0..cfg.predicates.len())].clone();
            gold.relations.push(TimedRelation { subject_id: s, object_id: o, predicate, span: random_span(rng, t_n) });
        } else {
            unrelated.push((s, o));
        }
    }

    // frames: flat background, objects painted in id order
    let mut rgb = Vec::with_capacity(t_n);
    let mut depth = Vec::with_capacity(t_n);
    for t in 0..t_n {
        let mut px = vec![32u8; h * w * 3];
        let mut mm: Vec<u16> = (0..h * w).map(|i| 4000u16.saturating_sub((i / w) as u16 * 50)).collect();
        for (k, (o, track)) in gold.objects.iter().zip(&tracks).enumerate() {
            let (y0, x0) = track.at(t, t_n);
            let c = color(&o.category);
            for y in y0..y0 + track.size.0 {
                for x in x0..x0 + track.size.1 {
                    px[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&c);
                    mm[y * w + x] = 800 + 300 * k as u16;
                }
            }
        }
        rgb.push(RgbFrame { pixels: px });
        depth.push(DepthFrame { millimeters: mm });
    }
    let seq = RgbdSequence::new(video_id.clone(), w, h, cfg.duration, rgb, depth).expect("consistent frames");

    // predictions
    let mut pred = SceneGraph4D { objects: gold.objects.clone(), ..Default::default() };
    let mut jittered: Vec<u32> = gold.objects.iter().map(|o| o.id).collect();
    jittered.shuffle(rng);
    jittered.truncate(count(cfg.mask_jitter, n));
    let mut viou = BTreeMap::new();
    for (o, track) in gold.objects.iter().zip(&tracks) {
        let tube = if jittered.contains(&o.id) {
            box_tube(track, t_n, h, w, rng.gen_range(1..=track.size.1.max(1)))
        } else {
            gold.masks[&o.id].clone()
        };
        viou.insert(o.id, tube_iou(&tube, &gold.masks[&o.id]).expect("same dims"));
        pred.masks.insert(o.id, tube);
    }

    let g = gold.relations.len();
    let mut swapped: Vec<usize> = (0..g).collect();
    swapped.shuffle(rng);
    swapped.truncate(count(cfg.label_noise, g));
    let mut candidates: Vec<(Option<usize>, TimedRelation)> = Vec::new();
    let mut span_ious = Vec::with_capacity(g);
    for (i, r) in gold.relations.iter().enumerate() {
        let mut p = r.clone();
        if swapped.contains(&i) {
            let others: Vec<&String> = cfg.predicates.iter().filter(|q| **q != r.predicate).collect();
            p.predicate = others[rng.gen_range(0..others.len())].clone();
        }
        if cfg.span_jitter > 0.0 {
            let j = cfg.span_jitter;
            p.span = Span::new(r.span.start() + rng.gen_range(-j..=j), r.span.end() + rng.gen_range(-j..=j));
        }
        span_ious.push(p.span.iou(&r.span));
        candidates.push((Some(i), p));
    }
    unrelated.truncate(count(cfg.spurious, g));
    for (s, o) in unrelated {
        let predicate = cfg.predicates[rng.gen_range(0..cfg.predicates.len())].clone();
        candidates.push((None, TimedRelation { subject_id: s, object_id: o, predicate, span: random_span(rng, t_n) }));
    }
    candidates.shuffle(rng);

    let mut ranks = vec![0; g];
    let mut spurious_ranks = Vec::new();
    for (rank, (origin, r)) in candidates.into_iter().enumerate() {
        match origin {
            Some(i) => ranks[i] = rank,
            None => spurious_ranks.push(rank),
        }
        pred.relations.push(r);
    }
    let fates = gold
        .relations
        .iter()
        .enumerate()
        .map(|(i, r)| RelationFate {
            predicate: r.predicate.clone(),
            swapped: swapped.contains(&i),
            rank: ranks[i],
            subject_viou: viou[&r.subject_id],
            object_viou: viou[&r.object_id],
            span_iou: span_ious[i],
        })
        .collect();
    SynthVideo { seq, gold, pred, book: VideoBookkeeping { video_id, fates, spurious_ranks } }
}

/// Deterministic in `cfg`: the same config yields identical videos.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<SynthVideo>, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok((0..cfg.videos).map(|i| video(cfg, &mut rng, i)).collect())
}

/// Writes `gold/`, `pred/`, `frames/<video>/`, `bookkeeping.json`,
/// `vocab.json` and `freq.json` under `dir`.
pub fn write_synthetic(dir: &Path, videos: &[SynthVideo]) -> Result<(), IoError> {
    let mut golds = Vec::with_capacity(videos.len());
    for v in videos {
        let id = v.seq.video_id();
        let gold = v.gold_document();
        save_document(&dir.join("gold").join(format!("{id}.json")), &gold)?;
        save_document(&dir.join("pred").join(format!("{id}.json")), &v.pred_document())?;
        save_frames(&dir.join("frames").join(id), &v.seq)?;
        golds.push(gold);
    }
    let stats = dataset_stats(&golds);
    let books: Vec<&VideoBookkeeping> = videos.iter().map(|v| &v.book).collect();
    let write = |name: &str, value: String| {
        let path = dir.join(name);
        fs::write(&path, value + "\n").map_err(|source| IoError::Io { path, source })
    };
    write("bookkeeping.json", serde_json::to_string_pretty(&books).expect("serializes"))?;
    write("vocab.json", serde_json::to_string_pretty(&stats.vocabulary()).expect("serializes"))?;
    write("freq.json", serde_json::to_string_pretty(&stats.frequencies()).expect("serializes"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{recall_at_k, EvalSample};
    use crate::model::validate_scene;

    fn samples(videos: &[SynthVideo]) -> Vec<EvalSample> {
        videos
            .iter()
            .map(|v| EvalSample { video_id: v.book.video_id.clone(), pred: v.pred.clone(), gold: v.gold.clone() })
            .collect()
    }

    #[test]
    fn noise_free_predictions_equal_gold() {
        let videos = generate_synthetic(&SynthConfig { videos: 5, ..Default::default() }).unwrap();
        for v in &videos {
            assert_eq!(v.pred.objects, v.gold.objects);
            assert_eq!(v.pred.masks, v.gold.masks);
            let mut sorted = v.pred.relations.clone();
            sorted.sort_by_key(|r| (r.subject_id, r.object_id));
            let mut gold = v.gold.relations.clone();
            gold.sort_by_key(|r| (r.subject_id, r.object_id));
            assert_eq!(sorted, gold);
            assert_eq!(validate_scene(&v.gold, Some(&v.seq)), vec![]);
        }
        let r = recall_at_k(&samples(&videos), &MatchConfig::default()).unwrap();
        assert_eq!(r.recall[&20], 100.0);
    }

    #[test]
    fn one_swap_in_four_gives_75() {
        let cfg = SynthConfig {
            videos: 1,
            min_objects: 4,
            max_objects: 4,
            relation_density: 1.0,
            max_relations: 4,
            label_noise: 0.25,
            ..Default::default()
        };
        let videos = generate_synthetic(&cfg).unwrap();
        assert_eq!(videos[0].gold.relations.len(), 4);
        let r = recall_at_k(&samples(&videos), &MatchConfig::default()).unwrap();
        assert_eq!(r.recall[&20], 75.0);
    }

    #[test]
    fn closed_form_matches_evaluator() {
        let cfg = SynthConfig {
            videos: 30,
            seed: 3,
            label_noise: 0.3,
            mask_jitter: 0.4,
            span_jitter: 0.2,
            spurious: 1.0,
            ..Default::default()
        };
        let videos = generate_synthetic(&cfg).unwrap();
        let books: Vec<_> = videos.iter().map(|v| v.book.clone()).collect();
        for viou in [0.3, 0.5, 0.7] {
            for tiou in [0.0, 0.5] {
                let mc = MatchConfig {
                    viou_threshold: viou,
                    temporal_iou_threshold: tiou,
                    ks: vec![1, 5, 20],
                    grounded: true,
                };
                let r = recall_at_k(&samples(&videos), &mc).unwrap();
                for &k in &mc.ks {
                    assert_eq!(expected_recall(&books, k, &mc), (r.recall[&k], r.mean_recall[&k]), "k={k} viou={viou}");
                }
            }
        }
    }

    #[test]
    fn deterministic_and_validated() {
        let cfg = SynthConfig { seed: 7, label_noise: 0.5, ..Default::default() };
        assert_eq!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&cfg).unwrap());
        assert!(generate_synthetic(&SynthConfig { label_noise: 1.5, ..Default::default() }).is_err());
        assert!(generate_synthetic(&SynthConfig { max_objects: 20, ..Default::default() }).is_err());
    }
}
