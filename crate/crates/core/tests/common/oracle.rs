//! Brute-force reference evaluator.
//!
//! Shares no code with the library's matcher: masks are decoded here from
//! their runs, and the best injective assignment is found by exhaustive
//! search over every assignment of gold relations to unused predictions.
//! Summation order and the percent formula follow the library's documented
//! conventions so that results compare with `==`.

use std::collections::{BTreeMap, HashMap};

use psg4d_core::mask::MaskTube;
use psg4d_core::model::{SceneGraph4D, Span};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub viou: f64,
    pub temporal_iou: f64,
    pub grounded: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OracleReport {
    pub recall: BTreeMap<usize, f64>,
    pub mean_recall: BTreeMap<usize, f64>,
}

fn decode(tube: &MaskTube) -> Vec<bool> {
    let mut out = Vec::new();
    for frame in tube.runs() {
        let mut fg = false;
        for &n in frame {
            out.extend(std::iter::repeat_n(fg, n as usize));
            fg = !fg;
        }
    }
    out
}

fn voxel_iou(a: &[bool], b: &[bool]) -> f64 {
    if a.len() != b.len() {
        return 0.0;
    }
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn span_iou(a: &Span, b: &Span) -> f64 {
    let lo = a.start().max(b.start());
    let hi = a.end().min(b.end());
    let inter = (hi - lo).max(0.0);
    let union = a.end().max(b.end()) - a.start().min(b.start());
    if union <= 0.0 {
        if a == b {
            1.0
        } else {
            0.0
        }
    } else {
        inter / union
    }
}

fn norm(p: &str) -> String {
    p.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

fn category(s: &SceneGraph4D, id: u32) -> Option<&str> {
    s.objects.iter().find(|o| o.id == id).map(|o| o.category.as_str())
}

fn mask_iou(pred: &SceneGraph4D, p: u32, gold: &SceneGraph4D, g: u32) -> f64 {
    match (pred.masks.get(&p), gold.masks.get(&g)) {
        (Some(a), Some(b)) => voxel_iou(&decode(a), &decode(b)),
        _ => 0.0,
    }
}

/// Largest number of gold items (from `gold_idx`, starting at position `at`)
/// that can be given distinct compatible predictions outside `used`.
fn best(
    at: usize,
    gold_idx: &[usize],
    used: u128,
    compat: &[Vec<bool>],
    memo: &mut HashMap<(usize, u128), usize>,
) -> usize {
    if at == gold_idx.len() {
        return 0;
    }
    if let Some(&v) = memo.get(&(at, used)) {
        return v;
    }
    let j = gold_idx[at];
    let mut top = best(at + 1, gold_idx, used, compat, memo);
    for (i, row) in compat.iter().enumerate() {
        if row[j] && used & (1u128 << i) == 0 {
            top = top.max(1 + best(at + 1, gold_idx, used | (1u128 << i), compat, memo));
        }
    }
    memo.insert((at, used), top);
    top
}

/// Matched gold relations per normalized predicate for the top `k` predictions.
pub fn matched_per_class(
    pred: &SceneGraph4D,
    gold: &SceneGraph4D,
    cfg: &OracleConfig,
    k: usize,
) -> BTreeMap<String, usize> {
    let top = &pred.relations[..pred.relations.len().min(k)];
    assert!(top.len() <= 128, "oracle handles at most 128 predictions");
    let compat: Vec<Vec<bool>> = top
        .iter()
        .map(|p| {
            gold.relations
                .iter()
                .map(|g| {
                    let labels = norm(&p.predicate) == norm(&g.predicate)
                        && category(pred, p.subject_id).is_some()
                        && category(pred, p.subject_id) == category(gold, g.subject_id)
                        && category(pred, p.object_id).is_some()
                        && category(pred, p.object_id) == category(gold, g.object_id);
                    let timed = cfg.temporal_iou <= 0.0 || span_iou(&p.span, &g.span) >= cfg.temporal_iou;
                    let grounded = !cfg.grounded
                        || (mask_iou(pred, p.subject_id, gold, g.subject_id) >= cfg.viou
                            && mask_iou(pred, p.object_id, gold, g.object_id) >= cfg.viou);
                    labels && timed && grounded
                })
                .collect()
        })
        .collect();
    // predicates never match across classes, so classes are independent
    let mut by_class: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (j, g) in gold.relations.iter().enumerate() {
        by_class.entry(norm(&g.predicate)).or_default().push(j);
    }
    by_class
        .into_iter()
        .map(|(c, idx)| {
            let n = best(0, &idx, 0, &compat, &mut HashMap::new());
            (c, n)
        })
        .collect()
}

fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Dataset R@K (macro over videos with gold) and mR@K (pooled per class).
pub fn evaluate(videos: &[(SceneGraph4D, SceneGraph4D)], cfg: &OracleConfig, ks: &[usize]) -> OracleReport {
    let mut out = OracleReport::default();
    for &k in ks {
        let (mut sum, mut n) = (0.0, 0usize);
        let mut classes: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for (pred, gold) in videos {
            let hits = matched_per_class(pred, gold, cfg, k);
            for g in &gold.relations {
                classes.entry(norm(&g.predicate)).or_default().1 += 1;
            }
            for (c, h) in &hits {
                classes.entry(c.clone()).or_default().0 += h;
            }
            if !gold.relations.is_empty() {
                sum += percent(hits.values().sum(), gold.relations.len());
                n += 1;
            }
        }
        out.recall.insert(k, if n == 0 { 0.0 } else { sum / n as f64 });
        let mut csum = 0.0;
        for &(h, t) in classes.values() {
            csum += percent(h, t);
        }
        out.mean_recall.insert(k, if classes.is_empty() { 0.0 } else { csum / classes.len() as f64 });
    }
    out
}
