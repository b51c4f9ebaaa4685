//! Core domain types for 4D scenes and their panoptic scene graphs.
//!
//! Everything here is immutable once built. Time spans are stored as
//! fractions of the video duration in `[0, 1]`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::mask::MaskTube;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid label {0:?}: empty after trimming")]
    InvalidLabel(String),
    #[error("rgb-d sequence: {0}")]
    Sequence(String),
}

/// A single RGB frame, row-major interleaved RGB bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbFrame {
    pub pixels: Vec<u8>,
}

/// A single depth frame in millimeters, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthFrame {
    pub millimeters: Vec<u16>,
}

/// Aligned RGB and depth frames of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdSequence {
    video_id: String,
    width: usize,
    height: usize,
    duration: f64,
    rgb: Vec<RgbFrame>,
    depth: Vec<DepthFrame>,
}

impl RgbdSequence {
    pub fn new(
        video_id: impl Into<String>,
        width: usize,
        height: usize,
        duration: f64,
        rgb: Vec<RgbFrame>,
        depth: Vec<DepthFrame>,
    ) -> Result<Self, ModelError> {
        if width == 0 || height == 0 {
            return Err(ModelError::Sequence("width and height must be positive".into()));
        }
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(ModelError::Sequence(format!("duration must be positive, got {duration}")));
        }
        if rgb.is_empty() {
            return Err(ModelError::Sequence("at least one frame is required".into()));
        }
        if rgb.len() != depth.len() {
            return Err(ModelError::Sequence(format!("{} rgb frames but {} depth frames", rgb.len(), depth.len())));
        }
        let plane = width * height;
        for (t, (c, d)) in rgb.iter().zip(&depth).enumerate() {
            if c.pixels.len() != plane * 3 {
                return Err(ModelError::Sequence(format!("rgb frame {t} has wrong size")));
            }
            if d.millimeters.len() != plane {
                return Err(ModelError::Sequence(format!("depth frame {t} has wrong size")));
            }
        }
        Ok(Self { video_id: video_id.into(), width, height, duration, rgb, depth })
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }
    pub fn frames(&self) -> usize {
        self.rgb.len()
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn duration(&self) -> f64 {
        self.duration
    }
    pub fn rgb_frames(&self) -> &[RgbFrame] {
        &self.rgb
    }
    pub fn depth_frames(&self) -> &[DepthFrame] {
        &self.depth
    }

    /// Converts an absolute time in seconds into a fraction of the duration.
    pub fn to_fraction(&self, seconds: f64) -> f64 {
        seconds / self.duration
    }
}

/// Canonical label: lowercase category plus an optional instance index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Label {
    pub category: String,
    pub instance: Option<u32>,
}

impl Label {
    pub fn parse(raw: &str) -> Result<Self, ModelError> {
        let (category, instance) = normalize_label(raw)?;
        Ok(Self { category, instance })
    }

    /// Two labels are compatible when categories agree and instance indices
    /// agree or at least one side leaves its index unspecified.
    pub fn compatible(&self, other: &Label) -> bool {
        self.category == other.category
            && match (self.instance, other.instance) {
                (Some(a), Some(b)) => a == b,
                _ => true,
            }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.instance {
            Some(i) => write!(f, "{}-{}", self.category, i),
            None => f.write_str(&self.category),
        }
    }
}

/// Splits a raw label such as `"Person 1"` or `"road-barrier-295"` into a
/// lowercase category and an optional trailing instance index.
pub fn normalize_label(raw: &str) -> Result<(String, Option<u32>), ModelError> {
    let collapsed = raw.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    if collapsed.is_empty() {
        return Err(ModelError::InvalidLabel(raw.to_string()));
    }
    let digits = collapsed.len() - collapsed.trim_end_matches(|c: char| c.is_ascii_digit()).len();
    if digits > 0 && digits < collapsed.len() {
        let (head, tail) = collapsed.split_at(collapsed.len() - digits);
        if let Some(category) = head.strip_suffix([' ', '-']) {
            let category = category.trim_end();
            if let (false, Ok(index)) = (category.is_empty(), tail.parse::<u32>()) {
                return Ok((category.to_string(), Some(index)));
            }
        }
    }
    Ok((collapsed, None))
}

/// Serialized form of a normalized label, the inverse of [`normalize_label`].
pub fn format_label(category: &str, instance: Option<u32>) -> String {
    Label { category: category.to_string(), instance }.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub id: u32,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_index: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl ObjectInstance {
    pub fn new(id: u32, category: impl Into<String>) -> Self {
        Self { id, category: category.into(), instance_index: None, description: None }
    }

    pub fn label(&self) -> Label {
        Label { category: self.category.clone(), instance: self.instance_index }
    }
}

/// Half-open bookkeeping of how a raw span was repaired during construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpanRepair {
    Clamped,
    Swapped,
    NotFinite,
}

/// A `(start, end)` pair of duration fractions with `0 <= start <= end <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span {
    start: f64,
    end: f64,
}

impl Span {
    /// Clamps to `[0, 1]` and reorders; any repair is reported.
    pub fn repaired(start: f64, end: f64) -> (Self, Vec<SpanRepair>) {
        let mut repairs = Vec::new();
        let fix = |v: f64, repairs: &mut Vec<SpanRepair>| {
            if !v.is_finite() {
                repairs.push(SpanRepair::NotFinite);
                return 0.0;
            }
            if !(0.0..=1.0).contains(&v) {
                repairs.push(SpanRepair::Clamped);
            }
            v.clamp(0.0, 1.0)
        };
        let mut s = fix(start, &mut repairs);
        let mut e = fix(end, &mut repairs);
        if s > e {
            std::mem::swap(&mut s, &mut e);
            repairs.push(SpanRepair::Swapped);
        }
        (Self { start: s, end: e }, repairs)
    }

    pub fn new(start: f64, end: f64) -> Self {
        Self::repaired(start, end).0
    }

    pub fn full() -> Self {
        Self { start: 0.0, end: 1.0 }
    }

    pub fn start(&self) -> f64 {
        self.start
    }
    pub fn end(&self) -> f64 {
        self.end
    }

    /// Interval IoU. Two identical degenerate spans score 1.
    pub fn iou(&self, other: &Span) -> f64 {
        let inter = (self.end.min(other.end) - self.start.max(other.start)).max(0.0);
        let union = self.end.max(other.end) - self.start.min(other.start);
        if union <= 0.0 {
            return if self == other { 1.0 } else { 0.0 };
        }
        inter / union
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedRelation {
    pub subject_id: u32,
    pub object_id: u32,
    pub predicate: String,
    pub span: Span,
}

/// Label-level relation record used by the parser and the evaluator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quintuple {
    pub subject: Label,
    pub predicate: String,
    pub object: Label,
    pub span: Span,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<u32>,
}

impl Quintuple {
    /// Canonical one-line form, `(subject, predicate, object, start, end)`.
    pub fn render(&self) -> String {
        format!("({}, {}, {}, {}, {})", self.subject, self.predicate, self.object, self.span.start(), self.span.end())
    }
}

/// Normalizes a predicate string: lowercase, trimmed, inner whitespace collapsed.
pub fn normalize_predicate(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph4D {
    pub objects: Vec<ObjectInstance>,
    pub masks: BTreeMap<u32, MaskTube>,
    pub relations: Vec<TimedRelation>,
}

impl SceneGraph4D {
    pub fn object(&self, id: u32) -> Option<&ObjectInstance> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn has_all_masks(&self) -> bool {
        self.objects.iter().all(|o| self.masks.contains_key(&o.id))
    }
}

/// Machine-readable invariant violation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "kebab-case")]
pub enum Violation {
    DuplicateObjectId { id: u32 },
    EmptyCategory { id: u32 },
    NonCanonicalCategory { id: u32 },
    DanglingObject { id: u32 },
    SelfRelation { id: u32 },
    EmptyPredicate { index: usize },
    InvalidSpan { index: usize },
    OrphanMask { id: u32 },
    CorruptMask { id: u32 },
    TubeLengthMismatch { id: u32, expected: usize, found: usize },
    TubeSizeMismatch { id: u32 },
}

impl Violation {
    pub fn code(&self) -> &'static str {
        match self {
            Violation::DuplicateObjectId { .. } => "duplicate-object-id",
            Violation::EmptyCategory { .. } => "empty-category",
            Violation::NonCanonicalCategory { .. } => "non-canonical-category",
            Violation::DanglingObject { .. } => "dangling-object",
            Violation::SelfRelation { .. } => "self-relation",
            Violation::EmptyPredicate { .. } => "empty-predicate",
            Violation::InvalidSpan { .. } => "invalid-span",
            Violation::OrphanMask { .. } => "orphan-mask",
            Violation::CorruptMask { .. } => "corrupt-mask",
            Violation::TubeLengthMismatch { .. } => "tube-length-mismatch",
            Violation::TubeSizeMismatch { .. } => "tube-size-mismatch",
        }
    }
}

/// Returns every invariant violation of `scene`; empty iff well-formed.
pub fn validate_scene(scene: &SceneGraph4D, seq: Option<&RgbdSequence>) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for o in &scene.objects {
        if !ids.insert(o.id) {
            out.push(Violation::DuplicateObjectId { id: o.id });
        }
        if o.category.trim().is_empty() {
            out.push(Violation::EmptyCategory { id: o.id });
        } else if normalize_label(&o.category).map(|(c, _)| c != o.category).unwrap_or(true) {
            out.push(Violation::NonCanonicalCategory { id: o.id });
        }
    }
    let mut dangling = BTreeSet::new();
    for (index, r) in scene.relations.iter().enumerate() {
        for id in [r.subject_id, r.object_id] {
            if !ids.contains(&id) && dangling.insert(id) {
                out.push(Violation::DanglingObject { id });
            }
        }
        if r.subject_id == r.object_id {
            out.push(Violation::SelfRelation { id: r.subject_id });
        }
        if r.predicate.trim().is_empty() {
            out.push(Violation::EmptyPredicate { index });
        }
        let s = r.span;
        if !(0.0 <= s.start() && s.start() <= s.end() && s.end() <= 1.0) {
            out.push(Violation::InvalidSpan { index });
        }
    }
    for (&id, tube) in &scene.masks {
        if !ids.contains(&id) {
            out.push(Violation::OrphanMask { id });
        }
        if tube.check().is_err() {
            out.push(Violation::CorruptMask { id });
        }
        if let Some(seq) = seq {
            if tube.frames() != seq.frames() {
                out.push(Violation::TubeLengthMismatch { id, expected: seq.frames(), found: tube.frames() });
            }
            if tube.width() != seq.width() || tube.height() != seq.height() {
                out.push(Violation::TubeSizeMismatch { id });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_label("Person 1").unwrap(), ("person".into(), Some(1)));
        assert_eq!(normalize_label("gravel").unwrap(), ("gravel".into(), None));
        assert_eq!(normalize_label("road-barrier-295").unwrap(), ("road-barrier".into(), Some(295)));
        assert_eq!(normalize_label("  Railroad    Track ").unwrap(), ("railroad track".into(), None));
        assert_eq!(normalize_label("42").unwrap(), ("42".into(), None));
        assert!(normalize_label("   ").is_err());
    }

    #[test]
    fn span_repairs() {
        let (s, r) = Span::repaired(0.9, 0.2);
        assert_eq!((s.start(), s.end()), (0.2, 0.9));
        assert_eq!(r, vec![SpanRepair::Swapped]);
        let (s, r) = Span::repaired(-0.5, 1.5);
        assert_eq!((s.start(), s.end()), (0.0, 1.0));
        assert_eq!(r.len(), 2);
        assert_eq!(Span::new(0.1, 0.5).iou(&Span::new(0.3, 0.7)), 0.2 / 0.6);
        assert_eq!(Span::new(0.4, 0.4).iou(&Span::new(0.4, 0.4)), 1.0);
    }

    fn two_objects() -> SceneGraph4D {
        SceneGraph4D {
            objects: vec![ObjectInstance::new(1, "person"), ObjectInstance::new(2, "cup")],
            masks: BTreeMap::new(),
            relations: vec![TimedRelation {
                subject_id: 1,
                object_id: 2,
                predicate: "holding".into(),
                span: Span::new(0.1, 0.5),
            }],
        }
    }

    #[test]
    fn validate_well_formed() {
        assert!(validate_scene(&two_objects(), None).is_empty());
    }

    #[test]
    fn validate_dangling() {
        let mut s = two_objects();
        s.relations[0].object_id = 9;
        assert_eq!(validate_scene(&s, None), vec![Violation::DanglingObject { id: 9 }]);
    }

    #[test]
    fn validate_tube_length() {
        let mut s = two_objects();
        s.masks.insert(1, MaskTube::from_dense(3, 2, 2, &[false; 12]).unwrap());
        let frames = (0..4).map(|_| (RgbFrame { pixels: vec![0; 12] }, DepthFrame { millimeters: vec![0; 4] })).unzip();
        let seq = RgbdSequence::new("v", 2, 2, 1.0, frames.0, frames.1).unwrap();
        let v = validate_scene(&s, Some(&seq));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].code(), "tube-length-mismatch");
    }

    proptest! {
        #[test]
        fn normalize_idempotent(raw in "[A-Za-z0-9 \\-]{1,16}") {
            if let Ok((c, i)) = normalize_label(&raw) {
                let again = normalize_label(&format_label(&c, i)).unwrap();
                prop_assert_eq!(again, (c, i));
            }
        }
    }
}
