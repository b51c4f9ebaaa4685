//! Central finite differences against analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::estimators::ModelConfig;
use super::losses::evaluate;
use super::losses::{loss_and_grad, Component, LossConfig, Model, TrainBatch};
use super::tensor::{FeatureGrid, FeatureSequence};
use super::TranscendError;
use crate::mask::MaskTube;

pub const GRAD_CHECK_STEP: f64 = 1e-4;

/// Below this magnitude relative error is measured against the floor, so
/// vanishing gradients are compared absolutely.
const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Parameter index with the largest error.
    pub worst: usize,
    pub checked: usize,
}

/// Compares `analytic` with central differences of `loss` around `params`.
/// Relative error is `|a - n| / max(|a|, |n|, 1e-3)`.
pub fn grad_check<F>(mut loss: F, params: &[f64], analytic: &[f64], h: f64) -> GradCheck
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "one gradient per parameter");
    let mut x = params.to_vec();
    let mut out = GradCheck { max_rel_error: 0.0, worst: 0, checked: 0 };
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let up = loss(&x);
        x[i] = orig - h;
        let down = loss(&x);
        x[i] = orig;
        let num = (up - down) / (2.0 * h);
        let a = analytic[i];
        let err = (a - num).abs() / a.abs().max(num.abs()).max(REL_FLOOR);
        if err > out.max_rel_error || err.is_nan() {
            out.max_rel_error = err;
            out.worst = i;
        }
        out.checked += 1;
    }
    out
}

/// Gradient check of the weighted total over every parameter of
/// `components`.
pub fn check_model_gradients(
    model: &Model,
    batch: &TrainBatch,
    cfg: &LossConfig,
    components: &[Component],
    h: f64,
) -> Result<GradCheck, TranscendError> {
    let (_, _, analytic) = loss_and_grad(model, batch, cfg, components)?;
    let flat: Vec<f64> = components.iter().flat_map(|c| model.params(*c).flatten()).collect();
    let mut probe = model.clone();
    let mut failure = None;
    let report = grad_check(
        |x| {
            let mut off = 0;
            for c in components {
                let n = probe.params(*c).size();
                probe.params_mut(*c).assign(&x[off..off + n]).expect("same layout");
                off += n;
            }
            match evaluate(&probe, batch, cfg) {
                Ok((_, total)) => total,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        &flat,
        &analytic,
        h,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

/// A batch of uniform(-1, 1) features on a `grid` x `grid` patch layout,
/// with every optional input present. For gradient checks.
pub fn random_batch(cfg: &ModelConfig, grid: usize, seed: u64) -> TrainBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, s) = (cfg.dim, cfg.steps);
    let g = |rng: &mut ChaCha8Rng| {
        FeatureGrid::new(grid, grid, d, (0..grid * grid * d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .expect("consistent shape")
    };
    let frames: Vec<FeatureGrid> = (0..s).map(|_| g(&mut rng)).collect();
    let depth: Vec<FeatureGrid> = (0..s).map(|_| g(&mut rng)).collect();
    let cells: Vec<bool> = (0..s * grid * grid).map(|_| rng.gen_bool(0.4)).collect();
    TrainBatch {
        rgb: frames[0].clone(),
        video: Some(FeatureSequence::pooled(&frames).expect("non-empty")),
        depth_seq: Some(FeatureSequence::pooled(&depth).expect("non-empty")),
        depth,
        text: (0..s).map(|_| rng.gen_range(0..cfg.vocab)).collect(),
        mask: Some(MaskTube::from_dense(s, grid, grid, &cells).expect("consistent shape")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let f = |x: &[f64]| 3.0 * x[0] * x[0] + x[0] * x[1] - 2.0 * x[1] * x[1];
        let x = [0.7, -1.3];
        let g = [6.0 * x[0] + x[1], x[0] - 4.0 * x[1]];
        let r = grad_check(f, &x, &g, GRAD_CHECK_STEP);
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.checked, 2);
    }

    #[test]
    fn wrong_gradient_detected() {
        let f = |x: &[f64]| x[0] * x[0];
        let r = grad_check(f, &[1.0], &[3.0], GRAD_CHECK_STEP);
        assert!(r.max_rel_error > 0.3);
    }
}
