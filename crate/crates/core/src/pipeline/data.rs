use std::collections::BTreeMap;

use super::plan::DataRole;
use crate::io::{generate_synthetic, SynthConfig, SynthError};
use crate::mask::MaskTube;
use crate::model::{DepthFrame, RgbFrame, RgbdSequence, SceneGraph4D, Span};
use crate::transcend::{FixtureFeatures, ModelConfig, TrainBatch, TranscendError};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub seq: RgbdSequence,
    pub scene: SceneGraph4D,
}

/// Named datasets plus the predicate vocabulary used for text targets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DataRegistry {
    datasets: BTreeMap<String, Vec<Sample>>,
    pub predicates: Vec<String>,
}

/// What a synthetic dataset looks like.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    /// Full RGB-D videos with 4D scene graphs.
    Video4d,
    /// Single RGB-D frames.
    Image,
    /// Single frames whose relations hold for the whole clip.
    Image2dSg,
}

fn first_frame(s: &Sample) -> Sample {
    let seq = &s.seq;
    let one = RgbdSequence::new(
        seq.video_id(),
        seq.width(),
        seq.height(),
        seq.duration(),
        vec![RgbFrame { pixels: seq.rgb_frames()[0].pixels.clone() }],
        vec![DepthFrame { millimeters: seq.depth_frames()[0].millimeters.clone() }],
    )
    .expect("frame 0 of a valid sequence");
    let mut scene = s.scene.clone();
    for tube in scene.masks.values_mut() {
        let runs = tube.runs()[..1].to_vec();
        *tube = MaskTube::from_runs(tube.height(), tube.width(), runs).expect("frame 0 of a valid tube");
    }
    for r in &mut scene.relations {
        r.span = Span::full();
    }
    Sample { seq: one, scene }
}

impl DataRegistry {
    pub fn new(predicates: Vec<String>) -> Self {
        Self { datasets: BTreeMap::new(), predicates }
    }

    pub fn insert(&mut self, name: impl Into<String>, samples: Vec<Sample>) {
        self.datasets.insert(name.into(), samples);
    }

    pub fn get(&self, name: &str) -> Option<&[Sample]> {
        self.datasets.get(name).map(Vec::as_slice)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.datasets.keys().map(String::as_str)
    }

    /// Adds a generated dataset.
    pub fn add_synthetic(&mut self, name: &str, kind: SynthKind, cfg: &SynthConfig) -> Result<(), SynthError> {
        let samples = generate_synthetic(cfg)?
            .into_iter()
            .map(|v| Sample { seq: v.seq, scene: v.gold })
            .map(|s| if kind == SynthKind::Video4d { s } else { first_frame(&s) })
            .collect();
        self.insert(name, samples);
        Ok(())
    }

    /// The datasets the default plans bind, generated from `seed`: `psg4d`
    /// (4D), `diml` (RGB-D images), `ag` (videos), `vg` and `psg` (2D scene
    /// graphs), `videos` samples each.
    pub fn toy(seed: u64, videos: usize) -> Result<Self, SynthError> {
        let base = SynthConfig { videos, ..SynthConfig::default() };
        let mut reg = Self::new(base.predicates.clone());
        let kinds = [
            ("psg4d", SynthKind::Video4d),
            ("diml", SynthKind::Image),
            ("ag", SynthKind::Video4d),
            ("vg", SynthKind::Image2dSg),
            ("psg", SynthKind::Image2dSg),
        ];
        for (i, (name, kind)) in kinds.into_iter().enumerate() {
            let cfg = SynthConfig { seed: seed.wrapping_mul(31).wrapping_add(i as u64 + 1), ..base.clone() };
            reg.add_synthetic(name, kind, &cfg)?;
        }
        Ok(reg)
    }
}

/// A training batch carrying only what `roles` supply.
pub fn batch_for(
    sample: &Sample,
    roles: &[DataRole],
    feats: &FixtureFeatures,
    predicates: &[String],
    cfg: &ModelConfig,
) -> Result<TrainBatch, TranscendError> {
    let full = feats.batch(&sample.seq, &sample.scene, predicates, cfg)?;
    let has = |r| roles.contains(&r);
    let sg = has(DataRole::SgAnnotations) || has(DataRole::Sg2d);
    let per_step_depth = has(DataRole::Depth) && (has(DataRole::Video) || has(DataRole::DepthSequence));
    let depth = if per_step_depth {
        full.depth.clone()
    } else if has(DataRole::Depth) || has(DataRole::DepthSequence) {
        vec![full.depth[0].clone()]
    } else {
        Vec::new()
    };
    let four_d = has(DataRole::SgAnnotations);
    Ok(TrainBatch {
        rgb: full.rgb,
        depth,
        video: (has(DataRole::Video) || four_d).then_some(full.video).flatten(),
        depth_seq: (has(DataRole::DepthSequence) || four_d).then_some(full.depth_seq).flatten(),
        text: if sg { full.text } else { Vec::new() },
        mask: if sg { full.mask } else { None },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_registry_shapes() {
        let reg = DataRegistry::toy(1, 2).unwrap();
        assert_eq!(reg.names().collect::<Vec<_>>(), vec!["ag", "diml", "psg", "psg4d", "vg"]);
        assert_eq!(reg.get("diml").unwrap()[0].seq.frames(), 1);
        assert_eq!(reg.get("psg4d").unwrap()[0].seq.frames(), 8);
        let vg = &reg.get("vg").unwrap()[0];
        assert!(vg.scene.relations.iter().all(|r| r.span == Span::full()));
        assert!(vg.scene.masks.values().all(|m| m.frames() == 1));
    }

    #[test]
    fn roles_select_fields() {
        let reg = DataRegistry::toy(1, 1).unwrap();
        let cfg = ModelConfig { dim: 8, layers: 1, heads: 2, steps: 2, vocab: 10, ..Default::default() };
        let feats = FixtureFeatures::new(2, 8, 0);
        let s = &reg.get("psg4d").unwrap()[0];
        let b = batch_for(s, &[DataRole::Rgb, DataRole::Depth], &feats, &reg.predicates, &cfg).unwrap();
        assert_eq!(b.depth.len(), 1);
        assert!(b.video.is_none() && b.mask.is_none() && b.text.is_empty());
        let b =
            batch_for(s, &[DataRole::Rgb, DataRole::Depth, DataRole::Video], &feats, &reg.predicates, &cfg).unwrap();
        assert_eq!(b.depth.len(), 2);
        let b = batch_for(s, &[DataRole::SgAnnotations], &feats, &reg.predicates, &cfg).unwrap();
        assert!(b.video.is_some() && b.depth_seq.is_some() && b.mask.is_some());
        assert_eq!(b.text.len(), 2);
    }
}
