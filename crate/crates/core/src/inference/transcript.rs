//! Per-video inference record, cross-stage validation and graph assembly.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::parse::{ObjectEntry, Triplet};
use crate::mask::MaskTube;
use crate::model::{Label, ObjectInstance, Quintuple, SceneGraph4D, TimedRelation};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InferenceTranscript {
    pub video_id: String,
    pub stage1: Vec<ObjectEntry>,
    pub stage2: Vec<(Label, Label)>,
    pub stage3: Vec<Triplet>,
    pub stage4: Vec<Quintuple>,
    pub final_output: Vec<Quintuple>,
    /// Raw backend output per request, in order.
    pub raw_texts: Vec<String>,
    pub warnings: Vec<String>,
    pub graph: SceneGraph4D,
}

impl InferenceTranscript {
    pub fn new(video_id: impl Into<String>) -> Self {
        Self { video_id: video_id.into(), ..Self::default() }
    }

    /// Stage-1 labels in order.
    pub fn labels(&self) -> Vec<Label> {
        self.stage1.iter().map(|e| e.label.clone()).collect()
    }

    /// Graph object id for a label: an exact stage-1 match, otherwise the
    /// first compatible one. Ids are stage-1 positions plus one.
    pub fn resolve(&self, label: &Label) -> Option<u32> {
        let pos = self
            .stage1
            .iter()
            .position(|e| &e.label == label)
            .or_else(|| self.stage1.iter().position(|e| e.label.compatible(label)))?;
        Some(pos as u32 + 1)
    }

    fn known(&self, label: &Label) -> bool {
        self.stage1.iter().any(|e| e.label.compatible(label))
    }

    /// Enforces the containment chain: stage-4 and final quintuples extend a
    /// stage-3 triplet, stage-3 pairs appear in stage 2 (unordered), and every
    /// label occurs in stage 1. Offending items are dropped with a warning.
    pub fn validate(&mut self) {
        let mut warnings = Vec::new();

        let stage2 = std::mem::take(&mut self.stage2);
        self.stage2 = stage2
            .into_iter()
            .filter(|(a, b)| {
                let ok = self.known(a) && self.known(b);
                if !ok {
                    warnings.push(format!("stage 2: dropped ({a}, {b}): label not in stage 1"));
                }
                ok
            })
            .collect();

        let stage3 = std::mem::take(&mut self.stage3);
        self.stage3 = stage3
            .into_iter()
            .filter(|t| {
                if !(self.known(&t.subject) && self.known(&t.object)) {
                    warnings.push(format!("stage 3: dropped {}: label not in stage 1", t.render()));
                    return false;
                }
                let paired = self.stage2.iter().any(|(a, b)| {
                    (a.compatible(&t.subject) && b.compatible(&t.object))
                        || (a.compatible(&t.object) && b.compatible(&t.subject))
                });
                if !paired {
                    warnings.push(format!("stage 3: dropped {}: pair not in stage 2", t.render()));
                }
                paired
            })
            .collect();

        for (name, list) in [("stage 4", &mut self.stage4), ("final output", &mut self.final_output)] {
            let items = std::mem::take(list);
            *list = items
                .into_iter()
                .filter(|q| {
                    let ok = self.stage3.iter().any(|t| {
                        t.predicate == q.predicate && t.subject.compatible(&q.subject) && t.object.compatible(&q.object)
                    });
                    if !ok {
                        warnings.push(format!("{name}: dropped {}: no matching stage-3 triplet", q.render()));
                    }
                    ok
                })
                .collect();
        }
        self.warnings.extend(warnings);
    }

    /// Builds the label-level scene graph from stage 1 and the final output.
    pub fn assemble(&mut self, masks: Option<&dyn MaskProvider>) {
        let objects: Vec<ObjectInstance> = self
            .stage1
            .iter()
            .enumerate()
            .map(|(i, e)| ObjectInstance {
                id: i as u32 + 1,
                category: e.label.category.clone(),
                instance_index: e.label.instance,
                description: (!e.description.is_empty()).then(|| e.description.clone()),
            })
            .collect();
        let mut relations = Vec::new();
        for q in &self.final_output {
            match (self.resolve(&q.subject), self.resolve(&q.object)) {
                (Some(s), Some(o)) => relations.push(TimedRelation {
                    subject_id: s,
                    object_id: o,
                    predicate: q.predicate.clone(),
                    span: q.span,
                }),
                _ => self.warnings.push(format!("graph: could not resolve {}", q.render())),
            }
        }
        let mut tubes = BTreeMap::new();
        if let Some(provider) = masks {
            for o in &objects {
                match provider.mask_for(o) {
                    Some(t) => {
                        tubes.insert(o.id, t);
                    }
                    None => self.warnings.push(format!("no mask for object {} ({})", o.id, o.label())),
                }
            }
        }
        self.graph = SceneGraph4D { objects, masks: tubes, relations };
    }
}

/// Gives repeated unindexed categories instance indices 1..n in order,
/// skipping indices already used explicitly.
pub fn assign_instances(entries: &mut [ObjectEntry]) {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for e in entries.iter() {
        *counts.entry(e.label.category.clone()).or_default() += 1;
    }
    let mut used: HashMap<String, Vec<u32>> = HashMap::new();
    for e in entries.iter() {
        if let Some(i) = e.label.instance {
            used.entry(e.label.category.clone()).or_default().push(i);
        }
    }
    let mut next: HashMap<String, u32> = HashMap::new();
    for e in entries.iter_mut() {
        if e.label.instance.is_some() || counts[&e.label.category] < 2 {
            continue;
        }
        let taken = used.entry(e.label.category.clone()).or_default();
        let n = next.entry(e.label.category.clone()).or_insert(1);
        while taken.contains(n) {
            *n += 1;
        }
        e.label.instance = Some(*n);
        taken.push(*n);
    }
}

/// Source of mask tubes for assembled objects.
pub trait MaskProvider: Send + Sync {
    fn mask_for(&self, object: &ObjectInstance) -> Option<MaskTube>;
}

/// Fixed tubes keyed by rendered label (`person-1`, `cup`).
#[derive(Debug, Clone, Default)]
pub struct FixtureMasks {
    pub by_label: BTreeMap<String, MaskTube>,
}

impl MaskProvider for FixtureMasks {
    fn mask_for(&self, object: &ObjectInstance) -> Option<MaskTube> {
        let label = object.label();
        self.by_label.get(&label.to_string()).or_else(|| self.by_label.get(&label.category)).cloned()
    }
}
