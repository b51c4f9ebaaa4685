//! Recall of each chained-inference stage against a gold scene graph.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{matching, IouCache, MatchConfig};
use crate::inference::InferenceTranscript;
use crate::model::{normalize_predicate, Label, SceneGraph4D};

/// Stage-wise metrics are always reported at this cutoff.
pub const STAGE_K: usize = 20;
const QUINTUPLE_TEMPORAL_IOU: f64 = 0.5;

/// R@20 per stage, in percent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub objects: f64,
    pub pairs: f64,
    pub triplets: f64,
    pub quintuples: f64,
}

impl StageMetrics {
    pub fn as_array(&self) -> [f64; 4] {
        [self.objects, self.pairs, self.triplets, self.quintuples]
    }
}

fn gold_label(gold: &SceneGraph4D, id: u32) -> Option<Label> {
    gold.object(id).map(|o| o.label())
}

fn recall(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * hits as f64 / total as f64
    }
}

struct Grounding<'a> {
    transcript: &'a InferenceTranscript,
    ious: IouCache<'a>,
    cfg: &'a MatchConfig,
}

impl Grounding<'_> {
    /// Whether a predicted endpoint label overlaps gold object `gold_id`.
    fn ok(&mut self, pred: &Label, gold_id: u32) -> bool {
        if !self.cfg.grounded {
            return true;
        }
        match self.transcript.resolve(pred) {
            Some(id) => self.ious.get(id, gold_id) >= self.cfg.viou_threshold,
            None => false,
        }
    }
}

pub fn stage_metrics(transcript: &InferenceTranscript, gold: &SceneGraph4D, cfg: &MatchConfig) -> StageMetrics {
    let mut g = Grounding { transcript, ious: IouCache::new(&transcript.graph, gold), cfg };

    let stage1: Vec<Label> = transcript.stage1.iter().take(STAGE_K).map(|e| e.label.clone()).collect();
    let objects = {
        let m = matching::max_matching(stage1.len(), gold.objects.len(), |i, j| {
            let go = &gold.objects[j];
            stage1[i].compatible(&go.label()) && g.ok(&stage1[i], go.id)
        });
        recall(matching::pairs(&m).len(), gold.objects.len())
    };

    let mut gold_pairs: Vec<(u32, u32)> = Vec::new();
    let mut seen = BTreeSet::new();
    for r in &gold.relations {
        let key = (r.subject_id.min(r.object_id), r.subject_id.max(r.object_id));
        if seen.insert(key) {
            gold_pairs.push((r.subject_id, r.object_id));
        }
    }
    let stage2: Vec<&(Label, Label)> = transcript.stage2.iter().take(STAGE_K).collect();
    let pairs = {
        let m = matching::max_matching(stage2.len(), gold_pairs.len(), |i, j| {
            let (a, b) = stage2[i];
            let (x, y) = gold_pairs[j];
            let (Some(lx), Some(ly)) = (gold_label(gold, x), gold_label(gold, y)) else {
                return false;
            };
            (a.compatible(&lx) && b.compatible(&ly) && g.ok(a, x) && g.ok(b, y))
                || (a.compatible(&ly) && b.compatible(&lx) && g.ok(a, y) && g.ok(b, x))
        });
        recall(matching::pairs(&m).len(), gold_pairs.len())
    };

    let gold_preds: Vec<String> = gold.relations.iter().map(|r| normalize_predicate(&r.predicate)).collect();
    let mut triplet_ok = |s: &Label, p: &str, o: &Label, j: usize| {
        let r = &gold.relations[j];
        let (Some(ls), Some(lo)) = (gold_label(gold, r.subject_id), gold_label(gold, r.object_id)) else {
            return false;
        };
        normalize_predicate(p) == gold_preds[j]
            && s.compatible(&ls)
            && o.compatible(&lo)
            && g.ok(s, r.subject_id)
            && g.ok(o, r.object_id)
    };

    let stage3: Vec<_> = transcript.stage3.iter().take(STAGE_K).collect();
    let m = matching::max_matching(stage3.len(), gold.relations.len(), |i, j| {
        triplet_ok(&stage3[i].subject, &stage3[i].predicate, &stage3[i].object, j)
    });
    let triplets = recall(matching::pairs(&m).len(), gold.relations.len());

    let stage4: Vec<_> = transcript.final_output.iter().take(STAGE_K).collect();
    let m = matching::max_matching(stage4.len(), gold.relations.len(), |i, j| {
        let q = stage4[i];
        q.span.iou(&gold.relations[j].span) >= QUINTUPLE_TEMPORAL_IOU
            && triplet_ok(&q.subject, &q.predicate, &q.object, j)
    });
    let quintuples = recall(matching::pairs(&m).len(), gold.relations.len());

    StageMetrics { objects, pairs, triplets, quintuples }
}
