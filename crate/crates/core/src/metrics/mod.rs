//! Scene-graph evaluation: grounded relation matching, R@K and mR@K,
//! per-stage recall of chained-inference transcripts, and seen/unseen plus
//! head/body/tail splits.
//!
//! Conventions:
//! - dataset R@K is a macro average of per-video recall (videos without gold
//!   relations are skipped);
//! - mR@K pools matches per predicate class over the whole dataset, then
//!   averages over the classes that occur in gold;
//! - the headline recall ignores time spans unless `temporal_iou_threshold`
//!   is positive;
//! - all values are percentages.

pub mod matching;
mod report;
mod splits;
mod stages;

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mask::tube_iou;
use crate::model::{normalize_predicate, SceneGraph4D};

pub use report::{parse_report, write_report, ReportFile, ReportParseError};
pub use splits::{split_report, tercile_partition, LabelFrequencies, SplitReport, Tier, Vocabulary};
pub use stages::{stage_metrics, StageMetrics, STAGE_K};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("{name} must lie in [0, 1], got {value}")]
    Threshold { name: &'static str, value: f64 },
    #[error("ks must be positive and strictly ascending, got {0:?}")]
    Ks(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchConfig {
    pub viou_threshold: f64,
    /// 0 disables the temporal gate.
    pub temporal_iou_threshold: f64,
    pub ks: Vec<usize>,
    /// Require both endpoint mask tubes to overlap their gold counterparts.
    pub grounded: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self { viou_threshold: 0.5, temporal_iou_threshold: 0.0, ks: vec![20, 50, 100], grounded: true }
    }
}

impl MatchConfig {
    pub fn ungrounded() -> Self {
        Self { grounded: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, value) in
            [("viou_threshold", self.viou_threshold), ("temporal_iou_threshold", self.temporal_iou_threshold)]
        {
            if !(0.0..=1.0).contains(&value) {
                return Err(ConfigError::Threshold { name, value });
            }
        }
        if self.ks.is_empty() || self.ks[0] == 0 || self.ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ConfigError::Ks(self.ks.clone()));
        }
        Ok(())
    }
}

/// One evaluated video: predictions (relations in rank order) and gold.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSample {
    pub video_id: String,
    pub pred: SceneGraph4D,
    pub gold: SceneGraph4D,
}

/// Matched `(prediction index, gold index)` pairs over the top-k predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchSet {
    pub pairs: Vec<(usize, usize)>,
    pub gold_total: usize,
}

/// Memoized endpoint IoUs between predicted and gold objects.
pub(crate) struct IouCache<'a> {
    pred: &'a SceneGraph4D,
    gold: &'a SceneGraph4D,
    cache: HashMap<(u32, u32), f64>,
}

impl<'a> IouCache<'a> {
    pub(crate) fn new(pred: &'a SceneGraph4D, gold: &'a SceneGraph4D) -> Self {
        Self { pred, gold, cache: HashMap::new() }
    }

    /// IoU of two object tubes; 0 when either is missing or dims differ.
    pub(crate) fn get(&mut self, pred_id: u32, gold_id: u32) -> f64 {
        let (pred, gold) = (self.pred, self.gold);
        *self.cache.entry((pred_id, gold_id)).or_insert_with(|| {
            match (pred.masks.get(&pred_id), gold.masks.get(&gold_id)) {
                (Some(a), Some(b)) => tube_iou(a, b).unwrap_or(0.0),
                _ => 0.0,
            }
        })
    }
}

fn category(scene: &SceneGraph4D, id: u32) -> Option<&str> {
    scene.object(id).map(|o| o.category.as_str())
}

/// Rank-ordered injective matching of the top-`k` predicted relations to gold.
pub fn match_scene(pred: &SceneGraph4D, gold: &SceneGraph4D, cfg: &MatchConfig, k: usize) -> MatchSet {
    let top = &pred.relations[..pred.relations.len().min(k)];
    let mut ious = IouCache::new(pred, gold);
    let pred_preds: Vec<String> = top.iter().map(|r| normalize_predicate(&r.predicate)).collect();
    let gold_preds: Vec<String> = gold.relations.iter().map(|r| normalize_predicate(&r.predicate)).collect();
    let mut compat = vec![vec![false; gold.relations.len()]; top.len()];
    for (i, p) in top.iter().enumerate() {
        for (j, g) in gold.relations.iter().enumerate() {
            compat[i][j] = pred_preds[i] == gold_preds[j]
                && category(pred, p.subject_id).is_some()
                && category(pred, p.subject_id) == category(gold, g.subject_id)
                && category(pred, p.object_id).is_some()
                && category(pred, p.object_id) == category(gold, g.object_id)
                && (cfg.temporal_iou_threshold <= 0.0 || p.span.iou(&g.span) >= cfg.temporal_iou_threshold)
                && (!cfg.grounded
                    || (ious.get(p.subject_id, g.subject_id) >= cfg.viou_threshold
                        && ious.get(p.object_id, g.object_id) >= cfg.viou_threshold));
        }
    }
    let m = matching::max_matching(top.len(), gold.relations.len(), |i, j| compat[i][j]);
    MatchSet { pairs: matching::pairs(&m), gold_total: gold.relations.len() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoTrace {
    pub video_id: String,
    pub pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    /// Macro-averaged recall per K.
    pub recall: BTreeMap<usize, f64>,
    /// Mean of pooled per-predicate recall per K.
    pub mean_recall: BTreeMap<usize, f64>,
    pub per_predicate: BTreeMap<String, BTreeMap<usize, f64>>,
    pub per_video: BTreeMap<String, BTreeMap<usize, f64>>,
    pub trace: BTreeMap<usize, Vec<VideoTrace>>,
}

fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Dataset-level R@K / mR@K. Videos are evaluated in parallel on the current
/// rayon pool; results are merged in input order.
pub fn recall_at_k(samples: &[EvalSample], cfg: &MatchConfig) -> Result<EvalReport, ConfigError> {
    cfg.validate()?;
    let per_sample: Vec<Vec<MatchSet>> =
        samples.par_iter().map(|s| cfg.ks.iter().map(|&k| match_scene(&s.pred, &s.gold, cfg, k)).collect()).collect();

    let mut report = EvalReport { ks: cfg.ks.clone(), ..Default::default() };
    for (ki, &k) in cfg.ks.iter().enumerate() {
        let mut video_sum = 0.0;
        let mut videos = 0usize;
        let mut class_hits: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        let mut traces = Vec::with_capacity(samples.len());
        for (s, sets) in samples.iter().zip(&per_sample) {
            let set = &sets[ki];
            for g in &s.gold.relations {
                class_hits.entry(normalize_predicate(&g.predicate)).or_default().1 += 1;
            }
            for &(_, j) in &set.pairs {
                class_hits.entry(normalize_predicate(&s.gold.relations[j].predicate)).or_default().0 += 1;
            }
            if set.gold_total > 0 {
                let r = percent(set.pairs.len(), set.gold_total);
                video_sum += r;
                videos += 1;
                report.per_video.entry(s.video_id.clone()).or_default().insert(k, r);
            }
            traces.push(VideoTrace { video_id: s.video_id.clone(), pairs: set.pairs.clone() });
        }
        report.recall.insert(k, if videos == 0 { 0.0 } else { video_sum / videos as f64 });
        let mut class_sum = 0.0;
        for (name, &(hit, total)) in &class_hits {
            let r = percent(hit, total);
            class_sum += r;
            report.per_predicate.entry(name.clone()).or_default().insert(k, r);
        }
        report.mean_recall.insert(k, if class_hits.is_empty() { 0.0 } else { class_sum / class_hits.len() as f64 });
        report.trace.insert(k, traces);
    }
    Ok(report)
}
