//! Deterministic stand-in encoders: patch statistics pushed through a fixed
//! random projection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::estimators::ModelConfig;
use super::losses::TrainBatch;
use super::tensor::{FeatureGrid, FeatureSequence, Matrix};
use super::TranscendError;
use crate::mask::MaskTube;
use crate::model::{RgbdSequence, SceneGraph4D};

/// Depth values are scaled by this many millimeters before projection.
const DEPTH_SCALE_MM: f64 = 4000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureFeatures {
    pub patch: usize,
    pub dim: usize,
    rgb_proj: Matrix,
    depth_proj: Matrix,
}

impl FixtureFeatures {
    pub fn new(patch: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw =
            |rows: usize| Matrix { rows, cols: dim, data: (0..rows * dim).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let rgb_proj = draw(4);
        let depth_proj = draw(2);
        Self { patch: patch.max(1), dim, rgb_proj, depth_proj }
    }

    fn grid_dims(&self, seq: &RgbdSequence) -> Result<(usize, usize), TranscendError> {
        if !seq.width().is_multiple_of(self.patch) || !seq.height().is_multiple_of(self.patch) {
            return Err(TranscendError::Shape(format!(
                "{}x{} frames are not divisible by patch {}",
                seq.height(),
                seq.width(),
                self.patch
            )));
        }
        Ok((seq.height() / self.patch, seq.width() / self.patch))
    }

    fn project(&self, stats: &[Vec<f64>], proj: &Matrix, rows: usize, cols: usize) -> FeatureGrid {
        let mut data = Vec::with_capacity(stats.len() * self.dim);
        for s in stats {
            for o in 0..self.dim {
                let mut acc = proj.get(s.len(), o);
                for (i, v) in s.iter().enumerate() {
                    acc += v * proj.get(i, o);
                }
                data.push(acc.tanh());
            }
        }
        FeatureGrid { rows, cols, values: Matrix { rows: rows * cols, cols: self.dim, data } }
    }

    /// Mean of `f(pixel index)` over each patch, one vector per cell.
    fn patch_means(&self, seq: &RgbdSequence, width: usize, f: impl Fn(usize) -> Vec<f64>) -> Vec<Vec<f64>> {
        let (rows, cols) = (seq.height() / self.patch, seq.width() / self.patch);
        let mut out = Vec::with_capacity(rows * cols);
        let n = (self.patch * self.patch) as f64;
        for r in 0..rows {
            for c in 0..cols {
                let mut acc: Vec<f64> = Vec::new();
                for y in r * self.patch..(r + 1) * self.patch {
                    for x in c * self.patch..(c + 1) * self.patch {
                        let v = f(y * width + x);
                        if acc.is_empty() {
                            acc = vec![0.0; v.len()];
                        }
                        acc.iter_mut().zip(v).for_each(|(a, v)| *a += v);
                    }
                }
                out.push(acc.into_iter().map(|a| a / n).collect());
            }
        }
        out
    }

    pub fn rgb_grid(&self, seq: &RgbdSequence, t: usize) -> Result<FeatureGrid, TranscendError> {
        let (rows, cols) = self.grid_dims(seq)?;
        let px = &seq.rgb_frames()[t].pixels;
        let stats = self.patch_means(seq, seq.width(), |i| (0..3).map(|k| px[i * 3 + k] as f64 / 255.0).collect());
        Ok(self.project(&stats, &self.rgb_proj, rows, cols))
    }

    pub fn depth_grid(&self, seq: &RgbdSequence, t: usize) -> Result<FeatureGrid, TranscendError> {
        let (rows, cols) = self.grid_dims(seq)?;
        let mm = &seq.depth_frames()[t].millimeters;
        let stats = self.patch_means(seq, seq.width(), |i| vec![mm[i] as f64 / DEPTH_SCALE_MM]);
        Ok(self.project(&stats, &self.depth_proj, rows, cols))
    }

    /// Frame index sampled for rollout step `j`.
    fn frame_for(seq: &RgbdSequence, j: usize, steps: usize) -> usize {
        j * seq.frames() / steps
    }

    /// A training batch for one video: RGB grid of the first frame, depth
    /// grids, pooled per-step RGB/depth sequences, per-step predicate tokens
    /// and the patch-level mask of the first object.
    pub fn batch(
        &self,
        seq: &RgbdSequence,
        scene: &SceneGraph4D,
        predicates: &[String],
        cfg: &ModelConfig,
    ) -> Result<TrainBatch, TranscendError> {
        if cfg.dim != self.dim {
            return Err(TranscendError::Shape(format!("feature dim {} vs model dim {}", self.dim, cfg.dim)));
        }
        let s = cfg.steps;
        let frames: Vec<usize> = (0..s).map(|j| Self::frame_for(seq, j, s)).collect();
        let rgb_grids = frames.iter().map(|&t| self.rgb_grid(seq, t)).collect::<Result<Vec<_>, _>>()?;
        let depth = frames.iter().map(|&t| self.depth_grid(seq, t)).collect::<Result<Vec<_>, _>>()?;
        let video = FeatureSequence::pooled(&rgb_grids)?;
        let depth_seq = FeatureSequence::pooled(&depth)?;

        let mut text = Vec::with_capacity(s);
        for j in 0..s {
            let at = (j as f64 + 0.5) / s as f64;
            let token = scene
                .relations
                .iter()
                .filter(|r| r.span.start() <= at && at <= r.span.end())
                .filter_map(|r| predicates.iter().position(|p| *p == r.predicate))
                .min()
                .map_or(0, |i| (i + 1).min(cfg.vocab - 1));
            text.push(token);
        }

        let (rows, cols) = (rgb_grids[0].rows, rgb_grids[0].cols);
        let mut cells = vec![false; s * rows * cols];
        if let Some(tube) = scene.objects.first().and_then(|o| scene.masks.get(&o.id)) {
            let dense = tube.to_dense().map_err(|e| TranscendError::Shape(e.to_string()))?;
            let (h, w) = (tube.height(), tube.width());
            for (j, &t) in frames.iter().enumerate() {
                for r in 0..rows {
                    for c in 0..cols {
                        let mut on = 0;
                        for y in r * self.patch..(r + 1) * self.patch {
                            for x in c * self.patch..(c + 1) * self.patch {
                                on += dense[(t * h + y) * w + x] as usize;
                            }
                        }
                        cells[(j * rows + r) * cols + c] = 2 * on >= self.patch * self.patch;
                    }
                }
            }
        }
        let mask = MaskTube::from_dense(s, rows, cols, &cells).map_err(|e| TranscendError::Shape(e.to_string()))?;
        Ok(TrainBatch {
            rgb: rgb_grids[0].clone(),
            depth,
            video: Some(video),
            depth_seq: Some(depth_seq),
            text,
            mask: Some(mask),
        })
    }
}
