use serde::{Deserialize, Serialize};

use super::losses::{loss_and_grad, Component, LossComponents, LossConfig, Model, TrainBatch};
use super::optim::{AdamW, AdamWConfig};
use super::params::round_f32;
use super::TranscendError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub loss: f64,
    pub components: LossComponents,
    pub lr: f64,
}

/// Optimizes a subset of the model's components on one loss configuration.
/// Each component has its own AdamW state and settings.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub loss: LossConfig,
    groups: Vec<(Component, AdamW)>,
}

impl Trainer {
    pub fn new(model: Model, loss: LossConfig, trainable: &[Component], opt: AdamWConfig) -> Self {
        Self::with_groups(model, loss, trainable.iter().map(|c| (*c, opt)).collect())
    }

    /// Later duplicates of a component are ignored.
    pub fn with_groups(model: Model, loss: LossConfig, mut groups: Vec<(Component, AdamWConfig)>) -> Self {
        groups.sort_by_key(|g| g.0);
        groups.dedup_by_key(|g| g.0);
        let groups = groups.into_iter().map(|(c, cfg)| (c, AdamW::new(cfg, model.params(c).size()))).collect();
        Self { model, loss, groups }
    }

    pub fn trainable(&self) -> Vec<Component> {
        self.groups.iter().map(|g| g.0).collect()
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    /// One AdamW update of the trainable components. Parameters are rounded
    /// to f32 afterwards. A non-finite loss leaves the model untouched.
    /// The reported rate is the first group's.
    pub fn train_step(&mut self, batch: &TrainBatch) -> Result<StepReport, TranscendError> {
        let trainable = self.trainable();
        let (components, loss, grad) = loss_and_grad(&self.model, batch, &self.loss, &trainable)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            let done = self.groups.first().map_or(0, |g| g.1.steps_taken());
            return Err(TranscendError::NonFinite(format!("loss at update {}", done + 1)));
        }
        let mut lr = 0.0;
        let mut off = 0;
        for (i, (c, opt)) in self.groups.iter_mut().enumerate() {
            let params = self.model.params_mut(*c);
            let n = params.size();
            let mut flat = params.flatten();
            let used = opt.step(&mut flat, &grad[off..off + n]);
            if i == 0 {
                lr = used;
            }
            flat.iter_mut().for_each(|v| *v = round_f32(*v));
            params.assign(&flat)?;
            off += n;
        }
        Ok(StepReport { loss, components, lr })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DepthFrame, RgbFrame, RgbdSequence, SceneGraph4D};
    use crate::transcend::estimators::ModelConfig;
    use crate::transcend::features::FixtureFeatures;
    use crate::transcend::losses::LossTerm;
    use crate::transcend::optim::Schedule;

    fn fixture() -> (ModelConfig, TrainBatch) {
        let cfg = ModelConfig { dim: 8, layers: 1, heads: 2, ff_mult: 2, steps: 2, vocab: 5, ..Default::default() };
        let feats = FixtureFeatures::new(2, cfg.dim, 4);
        let (w, h, n) = (8, 8, 4);
        let rgb = (0..n)
            .map(|t| RgbFrame { pixels: (0..w * h * 3).map(|i| ((i * 7 + t * 31) % 256) as u8).collect() })
            .collect();
        let depth = (0..n)
            .map(|t| DepthFrame { millimeters: (0..w * h).map(|i| (500 + i * 40 + t * 100) as u16).collect() })
            .collect();
        let seq = RgbdSequence::new("v", w, h, 2.0, rgb, depth).unwrap();
        let scene = SceneGraph4D::default();
        let b = feats.batch(&seq, &scene, &[], &cfg).unwrap();
        (cfg, b)
    }

    fn run(steps: usize) -> (Vec<f64>, Model) {
        let (cfg, b) = fixture();
        let opt = AdamWConfig {
            lr: 1e-2,
            weight_decay: 0.01,
            schedule: Schedule::Cosine { warmup: 5, total: steps as u64, min_ratio: 0.1 },
            ..Default::default()
        };
        let mut t = Trainer::new(Model::new(cfg, 21).unwrap(), LossConfig::default(), &Component::ALL, opt);
        let losses = (0..steps).map(|_| t.train_step(&b).unwrap().loss).collect();
        (losses, t.into_model())
    }

    #[test]
    fn deterministic_and_decreasing() {
        let (a, ma) = run(100);
        let (b, mb) = run(100);
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        assert!(a[99] < a[0] * 0.5, "{} -> {}", a[0], a[99]);
        for c in Component::ALL {
            assert!(ma.params(c).flatten().iter().all(|v| *v == (*v as f32) as f64));
        }
    }

    #[test]
    fn frozen_components_untouched() {
        let (cfg, b) = fixture();
        let m = Model::new(cfg, 2).unwrap();
        let lc = LossConfig { terms: [LossTerm::De, LossTerm::DepHeart].into(), ..LossConfig::default() };
        let mut t = Trainer::new(m.clone(), lc, &[Component::De], AdamWConfig::default());
        for _ in 0..3 {
            t.train_step(&b).unwrap();
        }
        assert_ne!(t.model.de, m.de);
        assert_eq!(t.model.rte, m.rte);
        assert_eq!(t.model.head, m.head);
    }

    #[test]
    fn non_finite_rejected() {
        let (cfg, mut b) = fixture();
        b.rgb.values.data[0] = f64::NAN;
        let m = Model::new(cfg, 2).unwrap();
        let mut t = Trainer::new(m.clone(), LossConfig::default(), &Component::ALL, AdamWConfig::default());
        assert!(matches!(t.train_step(&b), Err(TranscendError::NonFinite(_))));
        assert_eq!(t.model, m);
    }
}
