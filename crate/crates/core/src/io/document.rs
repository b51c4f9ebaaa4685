//! JSON annotation documents (`schema: 1`).
//!
//! ```json
//! {"schema": 1, "video_id": "v0", "duration": 2.0, "frames": 4, "width": 8, "height": 8,
//!  "objects": [{"id": 1, "category": "person", "mask_rle": [[3, 2, 59], ...]}],
//!  "relations": [{"subject_id": 1, "object_id": 2, "predicate": "holding",
//!                 "begin": 0.0, "end": 0.5, "confidence": 0.9}]}
//! ```
//! `mask_rle` holds one run list per frame, alternating background and
//! foreground and starting with background. `confidence` is optional and
//! only meaningful for predictions.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::mask::MaskTube;
use crate::model::{normalize_label, ObjectInstance, SceneGraph4D, Span, TimedRelation};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectRecord {
    pub id: u32,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_rle: Option<Vec<Vec<u32>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationRecord {
    pub subject_id: u32,
    pub object_id: u32,
    pub predicate: String,
    pub begin: f64,
    pub end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationDocument {
    pub schema: u32,
    pub video_id: String,
    pub duration: f64,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub objects: Vec<ObjectRecord>,
    pub relations: Vec<RelationRecord>,
}

fn field(path: impl Into<String>, message: impl Into<String>) -> (String, String) {
    (path.into(), message.into())
}

impl AnnotationDocument {
    /// Serialized form of a scene. Relation confidences are left unset.
    pub fn from_scene(
        video_id: impl Into<String>,
        duration: f64,
        (frames, height, width): (usize, usize, usize),
        scene: &SceneGraph4D,
    ) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            video_id: video_id.into(),
            duration,
            frames,
            width,
            height,
            objects: scene
                .objects
                .iter()
                .map(|o| ObjectRecord {
                    id: o.id,
                    category: o.category.clone(),
                    instance: o.instance_index,
                    description: o.description.clone(),
                    mask_rle: scene.masks.get(&o.id).map(|m| m.runs().to_vec()),
                })
                .collect(),
            relations: scene
                .relations
                .iter()
                .map(|r| RelationRecord {
                    subject_id: r.subject_id,
                    object_id: r.object_id,
                    predicate: r.predicate.clone(),
                    begin: r.span.start(),
                    end: r.span.end(),
                    confidence: None,
                })
                .collect(),
        }
    }

    /// Semantic checks beyond the JSON shape. Returns `(field path, message)`
    /// for the first problem.
    pub fn check(&self) -> Result<(), (String, String)> {
        if self.schema != SCHEMA_VERSION {
            return Err(field("schema", format!("unsupported schema {}, expected {SCHEMA_VERSION}", self.schema)));
        }
        if self.video_id.trim().is_empty() {
            return Err(field("video_id", "must not be empty"));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(field("duration", format!("must be positive, got {}", self.duration)));
        }
        for (name, v) in [("frames", self.frames), ("width", self.width), ("height", self.height)] {
            if v == 0 {
                return Err(field(name, "must be positive"));
            }
        }
        let mut ids = BTreeSet::new();
        for (i, o) in self.objects.iter().enumerate() {
            if !ids.insert(o.id) {
                return Err(field(format!("objects[{i}].id"), format!("duplicate id {}", o.id)));
            }
            match normalize_label(&o.category) {
                Ok((c, None)) if c == o.category => {}
                _ => {
                    return Err(field(
                        format!("objects[{i}].category"),
                        format!("{:?} is not a canonical lowercase category", o.category),
                    ))
                }
            }
            if let Some(runs) = &o.mask_rle {
                if runs.len() != self.frames {
                    return Err(field(
                        format!("objects[{i}].mask_rle"),
                        format!("{} frames, expected {}", runs.len(), self.frames),
                    ));
                }
                let plane = (self.width * self.height) as u64;
                for (t, r) in runs.iter().enumerate() {
                    let sum: u64 = r.iter().map(|&v| v as u64).sum();
                    if sum != plane {
                        return Err(field(
                            format!("objects[{i}].mask_rle[{t}]"),
                            format!("runs cover {sum} pixels, expected {plane}"),
                        ));
                    }
                }
            }
        }
        for (i, r) in self.relations.iter().enumerate() {
            for (name, id) in [("subject_id", r.subject_id), ("object_id", r.object_id)] {
                if !ids.contains(&id) {
                    return Err(field(format!("relations[{i}].{name}"), format!("unknown object {id}")));
                }
            }
            if r.subject_id == r.object_id {
                return Err(field(format!("relations[{i}].object_id"), "relation to itself"));
            }
            if r.predicate.trim().is_empty() {
                return Err(field(format!("relations[{i}].predicate"), "must not be empty"));
            }
            for (name, v) in [("begin", r.begin), ("end", r.end)] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(field(format!("relations[{i}].{name}"), format!("{v} is outside [0, 1]")));
                }
            }
            if r.begin > r.end {
                return Err(field(format!("relations[{i}].end"), "end precedes begin"));
            }
            if let Some(c) = r.confidence {
                if !c.is_finite() {
                    return Err(field(format!("relations[{i}].confidence"), "must be finite"));
                }
            }
        }
        Ok(())
    }

    /// The scene in document order.
    pub fn to_scene(&self) -> Result<SceneGraph4D, (String, String)> {
        self.check()?;
        let mut scene = SceneGraph4D::default();
        for (i, o) in self.objects.iter().enumerate() {
            scene.objects.push(ObjectInstance {
                id: o.id,
                category: o.category.clone(),
                instance_index: o.instance,
                description: o.description.clone(),
            });
            if let Some(runs) = &o.mask_rle {
                let tube = MaskTube::from_runs(self.height, self.width, runs.clone())
                    .map_err(|e| field(format!("objects[{i}].mask_rle"), e.to_string()))?;
                scene.masks.insert(o.id, tube);
            }
        }
        scene.relations = self
            .relations
            .iter()
            .map(|r| TimedRelation {
                subject_id: r.subject_id,
                object_id: r.object_id,
                predicate: r.predicate.clone(),
                span: Span::new(r.begin, r.end),
            })
            .collect();
        Ok(scene)
    }

    /// The scene with relations in rank order: by descending confidence,
    /// ties and unscored relations keep document order.
    pub fn to_ranked_scene(&self) -> Result<SceneGraph4D, (String, String)> {
        let mut scene = self.to_scene()?;
        let mut order: Vec<usize> = (0..self.relations.len()).collect();
        order.sort_by(|&a, &b| {
            let ca = self.relations[a].confidence.unwrap_or(f64::NEG_INFINITY);
            let cb = self.relations[b].confidence.unwrap_or(f64::NEG_INFINITY);
            cb.total_cmp(&ca)
        });
        scene.relations = order.into_iter().map(|i| scene.relations[i].clone()).collect();
        Ok(scene)
    }
}

/// Parses and validates a document. Errors carry the offending field path
/// and, for syntax or type errors, the line.
pub fn parse_document(text: &str, file: &Path) -> Result<AnnotationDocument, IoError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: AnnotationDocument = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        IoError::Schema {
            file: file.to_path_buf(),
            line: Some(inner.line()),
            field: if path == "." { String::new() } else { path },
            message: inner.to_string(),
        }
    })?;
    doc.check().map_err(|(field, message)| IoError::Schema { file: file.to_path_buf(), line: None, field, message })?;
    Ok(doc)
}

pub fn render_document(doc: &AnnotationDocument) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("documents serialize");
    s.push('\n');
    s
}

pub fn load_document(path: &Path) -> Result<AnnotationDocument, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Io { path: path.to_path_buf(), source })?;
    parse_document(&text, path)
}

pub fn save_document(path: &Path, doc: &AnnotationDocument) -> Result<(), IoError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| IoError::Io { path: parent.to_path_buf(), source })?;
    }
    fs::write(path, render_document(doc)).map_err(|source| IoError::Io { path: path.to_path_buf(), source })
}

/// Every `*.json` document in `dir`, sorted by file name.
pub fn load_document_dir(dir: &Path) -> Result<Vec<AnnotationDocument>, IoError> {
    let entries = fs::read_dir(dir).map_err(|source| IoError::Io { path: dir.to_path_buf(), source })?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for e in entries {
        let p = e.map_err(|source| IoError::Io { path: dir.to_path_buf(), source })?.path();
        if p.extension().is_some_and(|x| x == "json") {
            paths.push(p);
        }
    }
    paths.sort();
    paths.iter().map(|p| load_document(p)).collect()
}
