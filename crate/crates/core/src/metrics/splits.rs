//! Seen/unseen and head/body/tail breakdowns.
//!
//! Object splits score object-level recall (a gold object is recalled when an
//! injective matching pairs it with a predicted object of the same category,
//! grounded per config). Predicate splits score relation recall at the
//! smallest configured K. Both are pooled over the dataset within a partition.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{match_scene, matching, EvalSample, IouCache, MatchConfig};
use crate::model::{normalize_label, normalize_predicate, SceneGraph4D};

/// Training label sets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vocabulary {
    pub objects: BTreeSet<String>,
    pub predicates: BTreeSet<String>,
}

/// Training label frequencies.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelFrequencies {
    pub objects: BTreeMap<String, u64>,
    pub predicates: BTreeMap<String, u64>,
}

fn canon_category(raw: &str) -> String {
    normalize_label(raw).map(|(c, _)| c).unwrap_or_default()
}

impl Vocabulary {
    pub fn canonical(&self) -> Self {
        Self {
            objects: self.objects.iter().map(|s| canon_category(s)).collect(),
            predicates: self.predicates.iter().map(|s| normalize_predicate(s)).collect(),
        }
    }
}

impl LabelFrequencies {
    pub fn canonical(&self) -> Self {
        let mut out = Self::default();
        for (k, v) in &self.objects {
            *out.objects.entry(canon_category(k)).or_default() += v;
        }
        for (k, v) in &self.predicates {
            *out.predicates.entry(normalize_predicate(k)).or_default() += v;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Head,
    Body,
    Tail,
}

/// Rank-tercile split: labels sorted by descending frequency (ties by name),
/// rank `i` of `n` falls into tier `3i / n`.
pub fn tercile_partition(freq: &BTreeMap<String, u64>) -> BTreeMap<String, Tier> {
    let mut ranked: Vec<(&String, u64)> = freq.iter().map(|(k, &v)| (k, v)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let n = ranked.len();
    ranked
        .into_iter()
        .enumerate()
        .map(|(i, (k, _))| {
            let tier = match 3 * i / n {
                0 => Tier::Head,
                1 => Tier::Body,
                _ => Tier::Tail,
            };
            (k.clone(), tier)
        })
        .collect()
}

/// Partition recalls in percent; `None` marks an empty partition.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub seen_object: Option<f64>,
    pub unseen_object: Option<f64>,
    pub seen_predicate: Option<f64>,
    pub unseen_predicate: Option<f64>,
    pub head_object: Option<f64>,
    pub body_object: Option<f64>,
    pub tail_object: Option<f64>,
    pub head_predicate: Option<f64>,
    pub body_predicate: Option<f64>,
    pub tail_predicate: Option<f64>,
}

impl SplitReport {
    pub fn entries(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("seen/object", self.seen_object),
            ("seen/predicate", self.seen_predicate),
            ("unseen/object", self.unseen_object),
            ("unseen/predicate", self.unseen_predicate),
            ("head/object", self.head_object),
            ("head/predicate", self.head_predicate),
            ("body/object", self.body_object),
            ("body/predicate", self.body_predicate),
            ("tail/object", self.tail_object),
            ("tail/predicate", self.tail_predicate),
        ]
    }
}

/// Gold objects recalled by an injective category (and mask) matching.
pub(crate) fn matched_objects(pred: &SceneGraph4D, gold: &SceneGraph4D, cfg: &MatchConfig) -> Vec<bool> {
    let mut ious = IouCache::new(pred, gold);
    let m = matching::max_matching(pred.objects.len(), gold.objects.len(), |i, j| {
        let (p, g) = (&pred.objects[i], &gold.objects[j]);
        p.category == g.category && (!cfg.grounded || ious.get(p.id, g.id) >= cfg.viou_threshold)
    });
    let mut hit = vec![false; gold.objects.len()];
    for (_, j) in matching::pairs(&m) {
        hit[j] = true;
    }
    hit
}

#[derive(Default)]
struct Tally(BTreeMap<&'static str, (usize, usize)>);

impl Tally {
    fn add(&mut self, key: &'static str, hit: bool) {
        let e = self.0.entry(key).or_default();
        e.0 += hit as usize;
        e.1 += 1;
    }
    fn get(&self, key: &str) -> Option<f64> {
        self.0.get(key).filter(|e| e.1 > 0).map(|&(h, t)| 100.0 * h as f64 / t as f64)
    }
}

fn tier_key(tier: Tier, object: bool) -> &'static str {
    match (tier, object) {
        (Tier::Head, true) => "head/object",
        (Tier::Body, true) => "body/object",
        (Tier::Tail, true) => "tail/object",
        (Tier::Head, false) => "head/predicate",
        (Tier::Body, false) => "body/predicate",
        (Tier::Tail, false) => "tail/predicate",
    }
}

/// Labels missing from the frequency table count as tail.
pub fn split_report(
    samples: &[EvalSample],
    vocab: Option<&Vocabulary>,
    freq: Option<&LabelFrequencies>,
    cfg: &MatchConfig,
) -> SplitReport {
    let vocab = vocab.map(Vocabulary::canonical);
    let freq = freq.map(LabelFrequencies::canonical);
    let object_tiers = freq.as_ref().map(|f| tercile_partition(&f.objects));
    let predicate_tiers = freq.as_ref().map(|f| tercile_partition(&f.predicates));
    let k = cfg.ks.first().copied().unwrap_or(20);
    let mut tally = Tally::default();

    for s in samples {
        let obj_hits = matched_objects(&s.pred, &s.gold, cfg);
        for (o, hit) in s.gold.objects.iter().zip(obj_hits) {
            let cat = canon_category(&o.category);
            if let Some(v) = &vocab {
                tally.add(if v.objects.contains(&cat) { "seen/object" } else { "unseen/object" }, hit);
            }
            if let Some(t) = &object_tiers {
                tally.add(tier_key(*t.get(&cat).unwrap_or(&Tier::Tail), true), hit);
            }
        }
        let set = match_scene(&s.pred, &s.gold, cfg, k);
        let mut rel_hit = vec![false; s.gold.relations.len()];
        for (_, j) in set.pairs {
            rel_hit[j] = true;
        }
        for (r, hit) in s.gold.relations.iter().zip(rel_hit) {
            let p = normalize_predicate(&r.predicate);
            if let Some(v) = &vocab {
                tally.add(if v.predicates.contains(&p) { "seen/predicate" } else { "unseen/predicate" }, hit);
            }
            if let Some(t) = &predicate_tiers {
                tally.add(tier_key(*t.get(&p).unwrap_or(&Tier::Tail), false), hit);
            }
        }
    }

    SplitReport {
        seen_object: tally.get("seen/object"),
        unseen_object: tally.get("unseen/object"),
        seen_predicate: tally.get("seen/predicate"),
        unseen_predicate: tally.get("unseen/predicate"),
        head_object: tally.get("head/object"),
        body_object: tally.get("body/object"),
        tail_object: tally.get("tail/object"),
        head_predicate: tally.get("head/predicate"),
        body_predicate: tally.get("body/predicate"),
        tail_predicate: tally.get("tail/predicate"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ObjectInstance, Span, TimedRelation};

    #[test]
    fn terciles_by_rank() {
        let f: BTreeMap<String, u64> =
            [("a", 10), ("b", 5), ("c", 1)].into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let t = tercile_partition(&f);
        assert_eq!(t["a"], Tier::Head);
        assert_eq!(t["b"], Tier::Body);
        assert_eq!(t["c"], Tier::Tail);
    }

    fn sample() -> EvalSample {
        let gold = SceneGraph4D {
            objects: vec![ObjectInstance::new(1, "person"), ObjectInstance::new(2, "cup")],
            masks: Default::default(),
            relations: vec![TimedRelation {
                subject_id: 1,
                object_id: 2,
                predicate: "holding".into(),
                span: Span::full(),
            }],
        };
        EvalSample { video_id: "v".into(), pred: gold.clone(), gold }
    }

    #[test]
    fn full_vocab_has_no_unseen() {
        let vocab = Vocabulary {
            objects: ["Person".to_string(), "cup".to_string()].into(),
            predicates: ["holding".to_string()].into(),
        };
        let r = split_report(&[sample()], Some(&vocab), None, &MatchConfig::ungrounded());
        assert_eq!(r.seen_object, Some(100.0));
        assert_eq!(r.seen_predicate, Some(100.0));
        assert_eq!(r.unseen_object, None);
        assert_eq!(r.unseen_predicate, None);
        assert_eq!(r.head_object, None);
    }
}
