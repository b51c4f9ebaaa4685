//! Depth estimator (3x3 conv + 1x1 projection) and the causal temporal
//! estimator used for both the RGB and the depth sequence.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{filled, init_weight, Bound, ParamSet};
use super::tape::{Tape, Var};
use super::tensor::{FeatureGrid, FeatureSequence, Matrix};
use super::TranscendError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regression {
    #[default]
    Mse,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_mult: usize,
    /// Rollout length S.
    pub steps: usize,
    /// Text vocabulary of the toy head.
    pub vocab: usize,
    pub regression: Regression,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { dim: 32, layers: 2, heads: 4, ff_mult: 4, steps: 4, vocab: 16, regression: Regression::Mse }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), TranscendError> {
        if self.dim == 0 || self.heads == 0 || self.steps == 0 || self.vocab == 0 || self.ff_mult == 0 {
            return Err(TranscendError::Config("dim, heads, steps, vocab and ff_mult must be positive".into()));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(TranscendError::Config(format!("{} heads do not divide dim {}", self.heads, self.dim)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthEstimator {
    pub dim: usize,
    pub params: ParamSet,
}

const CONV_W: usize = 0;
const CONV_B: usize = 1;
const PROJ_W: usize = 2;
const PROJ_B: usize = 3;

impl DepthEstimator {
    pub fn new<R: Rng>(dim: usize, rng: &mut R) -> Self {
        let mut params = ParamSet::default();
        params.push("conv_w", init_weight(rng, 9 * dim, dim));
        params.push("conv_b", filled(1, dim, 0.0));
        params.push("proj_w", init_weight(rng, dim, dim));
        params.push("proj_b", filled(1, dim, 0.0));
        Self { dim, params }
    }

    pub fn zeros(dim: usize) -> Self {
        let mut params = ParamSet::default();
        params.push("conv_w", filled(9 * dim, dim, 0.0));
        params.push("conv_b", filled(1, dim, 0.0));
        params.push("proj_w", filled(dim, dim, 0.0));
        params.push("proj_b", filled(1, dim, 0.0));
        Self { dim, params }
    }

    /// Delta 3x3 kernel and identity projection: output equals input.
    pub fn passthrough(dim: usize) -> Self {
        let mut f = Self::zeros(dim);
        let kernel = f.params.get_mut("conv_w").expect("conv_w");
        for i in 0..dim {
            kernel.set(4 * dim + i, i, 1.0);
        }
        *f.params.get_mut("proj_w").expect("proj_w") = Matrix::identity(dim);
        f
    }

    /// `x` stacks one or more `rows x cols` grids as `(n * rows * cols) x d`.
    pub(crate) fn apply(&self, tape: &mut Tape, b: &Bound, x: Var, rows: usize, cols: usize) -> Var {
        let patches = tape.im2col3x3(x, rows, cols);
        let conv = tape.matmul(patches, b.vars[CONV_W]);
        let conv = tape.add_row(conv, b.vars[CONV_B]);
        let proj = tape.matmul(conv, b.vars[PROJ_W]);
        tape.add_row(proj, b.vars[PROJ_B])
    }
}

/// Applies the depth estimator to a feature grid.
pub fn depth_estimate(f: &DepthEstimator, grid: &FeatureGrid) -> Result<FeatureGrid, TranscendError> {
    if grid.dim() != f.dim {
        return Err(TranscendError::Shape(format!("grid dim {} vs estimator dim {}", grid.dim(), f.dim)));
    }
    let mut tape = Tape::new();
    let b = f.params.bind(&mut tape);
    let x = tape.leaf(grid.values.clone());
    let y = f.apply(&mut tape, &b, x, grid.rows, grid.cols);
    Ok(FeatureGrid { rows: grid.rows, cols: grid.cols, values: tape.value(y).clone() })
}

/// Sinusoidal position table, `n x d`.
pub fn positions(n: usize, d: usize) -> Matrix {
    let mut m = Matrix::zeros(n, d);
    for pos in 0..n {
        for i in 0..d {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = pos as f64 * freq;
            m.set(pos, i, if i % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    m
}

/// Pre-norm causal transformer over `[condition prefix, step tokens]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalEstimator {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub params: ParamSet,
}

const PER_LAYER: usize = 16;

impl TemporalEstimator {
    pub fn new<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.dim;
        let ff = d * cfg.ff_mult;
        let mut params = ParamSet::default();
        for l in 0..cfg.layers {
            params.push(format!("l{l}.ln1_g"), filled(1, d, 1.0));
            params.push(format!("l{l}.ln1_b"), filled(1, d, 0.0));
            for w in ["q", "k", "v", "o"] {
                params.push(format!("l{l}.w{w}"), init_weight(rng, d, d));
                params.push(format!("l{l}.b{w}"), filled(1, d, 0.0));
            }
            params.push(format!("l{l}.ln2_g"), filled(1, d, 1.0));
            params.push(format!("l{l}.ln2_b"), filled(1, d, 0.0));
            params.push(format!("l{l}.w1"), init_weight(rng, d, ff));
            params.push(format!("l{l}.b1"), filled(1, ff, 0.0));
            params.push(format!("l{l}.w2"), init_weight(rng, ff, d));
            params.push(format!("l{l}.b2"), filled(1, d, 0.0));
        }
        params.push("lnf_g", filled(1, d, 1.0));
        params.push("lnf_b", filled(1, d, 0.0));
        params.push("out_w", init_weight(rng, d, d));
        params.push("out_b", filled(1, d, 0.0));
        Self { dim: d, layers: cfg.layers, heads: cfg.heads, params }
    }

    fn attention(&self, tape: &mut Tape, p: &[Var], x: Var) -> Var {
        let proj = |tape: &mut Tape, w: usize| {
            let y = tape.matmul(x, p[w]);
            tape.add_row(y, p[w + 1])
        };
        let q = proj(tape, 2);
        let k = proj(tape, 4);
        let v = proj(tape, 6);
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dh, dh);
            let kh = tape.slice_cols(k, h * dh, dh);
            let vh = tape.slice_cols(v, h * dh, dh);
            let kt = tape.transpose(kh);
            let s = tape.matmul(qh, kt);
            let s = tape.scale(s, scale);
            let a = tape.causal_softmax(s);
            outs.push(tape.matmul(a, vh));
        }
        let o = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs) };
        let o = tape.matmul(o, p[8]);
        tape.add_row(o, p[9])
    }

    /// Transformer plus output projection over `n x d` tokens.
    fn forward(&self, tape: &mut Tape, b: &Bound, tokens: Var) -> Var {
        let n = tape.value(tokens).rows;
        let pos = tape.leaf(positions(n, self.dim));
        let mut x = tape.add(tokens, pos);
        for l in 0..self.layers {
            let p = &b.vars[l * PER_LAYER..(l + 1) * PER_LAYER];
            let h = tape.layer_norm(x, p[0], p[1]);
            let a = self.attention(tape, p, h);
            x = tape.add(x, a);
            let h = tape.layer_norm(x, p[10], p[11]);
            let f = tape.matmul(h, p[12]);
            let f = tape.add_row(f, p[13]);
            let f = tape.gelu(f);
            let f = tape.matmul(f, p[14]);
            let f = tape.add_row(f, p[15]);
            x = tape.add(x, f);
        }
        let tail = &b.vars[self.layers * PER_LAYER..];
        let x = tape.layer_norm(x, tail[0], tail[1]);
        let y = tape.matmul(x, tail[2]);
        tape.add_row(y, tail[3])
    }

    /// Parallel pass: output `j` sees the prefix and teacher steps `< j`.
    pub(crate) fn teacher_forced(&self, tape: &mut Tape, b: &Bound, prefix: Var, teacher: Var) -> Var {
        let steps = tape.value(teacher).rows;
        let tokens = if steps > 1 {
            let shifted = tape.slice_rows(teacher, 0, steps - 1);
            tape.concat_rows(&[prefix, shifted])
        } else {
            prefix
        };
        self.forward(tape, b, tokens)
    }

    /// Generates `steps` outputs, feeding each back as the next token.
    pub(crate) fn autoregressive(&self, tape: &mut Tape, b: &Bound, prefix: Var, steps: usize) -> Var {
        let mut tokens = prefix;
        let mut outs = Vec::with_capacity(steps);
        for j in 0..steps {
            let y = self.forward(tape, b, tokens);
            let last = tape.slice_rows(y, j, 1);
            outs.push(last);
            if j + 1 < steps {
                tokens = tape.concat_rows(&[tokens, last]);
            }
        }
        tape.concat_rows(&outs)
    }
}

/// Rolls the temporal estimator out for `steps` steps from a pooled
/// condition grid, teacher-forced when a teacher sequence is given.
pub fn temporal_rollout(
    f: &TemporalEstimator,
    condition: &FeatureGrid,
    steps: usize,
    teacher: Option<&FeatureSequence>,
) -> Result<FeatureSequence, TranscendError> {
    if steps == 0 {
        return Err(TranscendError::Shape("rollout needs at least one step".into()));
    }
    if condition.dim() != f.dim {
        return Err(TranscendError::Shape(format!("condition dim {} vs estimator dim {}", condition.dim(), f.dim)));
    }
    let mut tape = Tape::new();
    let b = f.params.bind(&mut tape);
    let grid = tape.leaf(condition.values.clone());
    let prefix = tape.mean_rows(grid);
    let out = match teacher {
        Some(t) => {
            if t.steps() != steps || t.dim() != f.dim {
                return Err(TranscendError::Shape(format!(
                    "teacher is {}x{}, expected {steps}x{}",
                    t.steps(),
                    t.dim(),
                    f.dim
                )));
            }
            let tv = tape.leaf(t.values.clone());
            f.teacher_forced(&mut tape, &b, prefix, tv)
        }
        None => f.autoregressive(&mut tape, &b, prefix, steps),
    };
    Ok(FeatureSequence { values: tape.value(out).clone() })
}

/// Copies `src` into `dst` parameter by parameter.
pub fn init_from(dst: &mut TemporalEstimator, src: &TemporalEstimator) -> Result<(), TranscendError> {
    if (dst.dim, dst.layers, dst.heads) != (src.dim, src.layers, src.heads) {
        return Err(TranscendError::Shape("temporal estimators differ in shape".into()));
    }
    dst.params.copy_from(&src.params)
}

/// Stand-in for the language model: text logits and mask probabilities
/// from per-step scene vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyHead {
    pub params: ParamSet,
}

impl ToyHead {
    pub fn new<R: Rng>(dim: usize, vocab: usize, rng: &mut R) -> Self {
        let mut params = ParamSet::default();
        params.push("txt_w", init_weight(rng, dim, vocab));
        params.push("txt_b", filled(1, vocab, 0.0));
        params.push("mask_w", init_weight(rng, dim, 1));
        params.push("mask_b", filled(1, 1, 0.0));
        Self { params }
    }

    pub(crate) fn logits(&self, tape: &mut Tape, b: &Bound, z: Var) -> Var {
        let y = tape.matmul(z, b.vars[0]);
        tape.add_row(y, b.vars[1])
    }

    /// Per-step mask probabilities over the grid cells, stacked frame-major
    /// as `(steps * cells) x 1`.
    pub(crate) fn mask_probs(&self, tape: &mut Tape, b: &Bound, grid: Var, z: Var) -> Var {
        let steps = tape.value(z).rows;
        let mut frames = Vec::with_capacity(steps);
        for t in 0..steps {
            let zt = tape.slice_rows(z, t, 1);
            let h = tape.add_row(grid, zt);
            let s = tape.matmul(h, b.vars[2]);
            let s = tape.add_row(s, b.vars[3]);
            frames.push(tape.sigmoid(s));
        }
        tape.concat_rows(&frames)
    }
}
