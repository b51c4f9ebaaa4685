//! The full transcending model and its loss terms.

use std::collections::BTreeSet;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::estimators::{DepthEstimator, ModelConfig, Regression, TemporalEstimator, ToyHead};
use super::params::{Bound, ParamSet};
use super::tape::{Tape, Var};
use super::tensor::{FeatureGrid, FeatureSequence, Matrix};
use super::TranscendError;
use crate::mask::{dice_loss_grad_raw, focal_loss_grad_raw, iou_loss_grad_raw, FocalParams, MaskTube, DICE_SMOOTH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Component {
    De,
    Rte,
    Dte,
    Head,
}

impl Component {
    pub const ALL: [Component; 4] = [Component::De, Component::Rte, Component::Dte, Component::Head];

    pub fn name(self) -> &'static str {
        match self {
            Component::De => "de",
            Component::Rte => "rte",
            Component::Dte => "dte",
            Component::Head => "head",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossTerm {
    /// Text cross-entropy plus the three mask losses.
    Psg,
    De,
    Rte,
    Dte,
    DepHeart,
    DepDiamond,
}

/// Where the scene vectors fed to the toy head come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PsgFeatures {
    /// Pooled video and depth-sequence features of real 4D data.
    #[default]
    Gold,
    /// Autoregressive rollouts from a single RGB grid.
    Transcended,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub de: DepthEstimator,
    pub rte: TemporalEstimator,
    pub dte: TemporalEstimator,
    pub head: ToyHead,
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self, TranscendError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            cfg,
            de: DepthEstimator::new(cfg.dim, &mut rng),
            rte: TemporalEstimator::new(&cfg, &mut rng),
            dte: TemporalEstimator::new(&cfg, &mut rng),
            head: ToyHead::new(cfg.dim, cfg.vocab, &mut rng),
        })
    }

    pub fn params(&self, c: Component) -> &ParamSet {
        match c {
            Component::De => &self.de.params,
            Component::Rte => &self.rte.params,
            Component::Dte => &self.dte.params,
            Component::Head => &self.head.params,
        }
    }

    pub fn params_mut(&mut self, c: Component) -> &mut ParamSet {
        match c {
            Component::De => &mut self.de.params,
            Component::Rte => &mut self.rte.params,
            Component::Dte => &mut self.dte.params,
            Component::Head => &mut self.head.params,
        }
    }
}

/// Inputs for one loss evaluation. Grids are `rows x cols` patch features of
/// dimension d; sequences have `steps` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub rgb: FeatureGrid,
    /// One depth grid, or one per step.
    pub depth: Vec<FeatureGrid>,
    pub video: Option<FeatureSequence>,
    pub depth_seq: Option<FeatureSequence>,
    /// One target token per step.
    pub text: Vec<usize>,
    /// `steps x rows x cols` gold mask.
    pub mask: Option<MaskTube>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub txt: f64,
    pub iou: f64,
    pub dice: f64,
    pub focal: f64,
    pub de: f64,
    pub rte: f64,
    pub dte: f64,
    pub dep_heart: f64,
    pub dep_diamond: f64,
}

impl LossComponents {
    pub fn as_array(&self) -> [f64; 9] {
        [self.txt, self.iou, self.dice, self.focal, self.de, self.rte, self.dte, self.dep_heart, self.dep_diamond]
    }

    pub fn psg(&self) -> f64 {
        self.txt + self.iou + self.dice + self.focal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub txt: f64,
    pub iou: f64,
    pub dice: f64,
    pub focal: f64,
    pub de: f64,
    pub rte: f64,
    pub dte: f64,
    pub dep_heart: f64,
    pub dep_diamond: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            txt: 1.0,
            iou: 1.0,
            dice: 1.0,
            focal: 1.0,
            de: 1.0,
            rte: 1.0,
            dte: 1.0,
            dep_heart: 1.0,
            dep_diamond: 1.0,
        }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 9] {
        [self.txt, self.iou, self.dice, self.focal, self.de, self.rte, self.dte, self.dep_heart, self.dep_diamond]
    }
}

/// Weighted sum of the components, accumulated left to right.
pub fn total_loss(c: &LossComponents, w: &LossWeights) -> f64 {
    c.as_array().iter().zip(w.as_array()).fold(0.0, |acc, (c, w)| acc + c * w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub terms: BTreeSet<LossTerm>,
    pub psg_features: PsgFeatures,
    pub weights: LossWeights,
    pub focal: FocalParams,
    pub dice_smooth: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            terms: [
                LossTerm::Psg,
                LossTerm::De,
                LossTerm::Rte,
                LossTerm::Dte,
                LossTerm::DepHeart,
                LossTerm::DepDiamond,
            ]
            .into(),
            psg_features: PsgFeatures::Transcended,
            weights: LossWeights::default(),
            focal: FocalParams::default(),
            dice_smooth: DICE_SMOOTH,
        }
    }
}

/// Regression loss between equally shaped values.
pub fn regression_loss(pred: &Matrix, gold: &Matrix, mode: Regression) -> Result<f64, TranscendError> {
    if pred.shape() != gold.shape() {
        return Err(TranscendError::Shape(format!("{:?} vs {:?}", pred.shape(), gold.shape())));
    }
    let mut t = Tape::new();
    let (a, b) = (t.leaf(pred.clone()), t.leaf(gold.clone()));
    let l = rho(&mut t, a, b, mode);
    Ok(t.scalar_value(l))
}

fn rho(t: &mut Tape, a: Var, b: Var, mode: Regression) -> Var {
    match mode {
        Regression::Mse => t.mse(a, b),
        Regression::Cosine => t.cosine_distance(a, b),
    }
}

/// Parameter handles of every component on one tape.
pub(crate) struct BoundModel {
    pub de: Bound,
    pub rte: Bound,
    pub dte: Bound,
    pub head: Bound,
}

impl BoundModel {
    pub fn bind(tape: &mut Tape, m: &Model) -> Self {
        Self {
            de: m.de.params.bind(tape),
            rte: m.rte.params.bind(tape),
            dte: m.dte.params.bind(tape),
            head: m.head.params.bind(tape),
        }
    }

    pub fn get(&self, c: Component) -> &Bound {
        match c {
            Component::De => &self.de,
            Component::Rte => &self.rte,
            Component::Dte => &self.dte,
            Component::Head => &self.head,
        }
    }
}

pub(crate) struct LossGraph {
    pub total: Var,
    pub components: LossComponents,
}

fn missing(what: &str) -> TranscendError {
    TranscendError::MissingInput(what.to_string())
}

fn check_batch(m: &Model, b: &TrainBatch) -> Result<(), TranscendError> {
    let d = m.cfg.dim;
    let s = m.cfg.steps;
    if b.rgb.dim() != d {
        return Err(TranscendError::Shape(format!("rgb grid dim {} vs model dim {d}", b.rgb.dim())));
    }
    for g in &b.depth {
        if g.dim() != d || (g.rows, g.cols) != (b.rgb.rows, b.rgb.cols) {
            return Err(TranscendError::Shape("depth grid does not match the rgb grid".into()));
        }
    }
    if !(b.depth.is_empty() || b.depth.len() == 1 || b.depth.len() == s) {
        return Err(TranscendError::Shape(format!("{} depth grids for {s} steps", b.depth.len())));
    }
    for seq in [&b.video, &b.depth_seq].into_iter().flatten() {
        if (seq.steps(), seq.dim()) != (s, d) {
            return Err(TranscendError::Shape(format!("sequence is {}x{}, expected {s}x{d}", seq.steps(), seq.dim())));
        }
    }
    Ok(())
}

/// Records every active loss term on `tape`.
pub(crate) fn build_losses(
    tape: &mut Tape,
    m: &Model,
    bm: &BoundModel,
    batch: &TrainBatch,
    cfg: &LossConfig,
) -> Result<LossGraph, TranscendError> {
    check_batch(m, batch)?;
    let s = m.cfg.steps;
    let mode = m.cfg.regression;
    let has = |t: LossTerm| cfg.terms.contains(&t);
    let (rows, cols) = (batch.rgb.rows, batch.rgb.cols);

    let rgb = tape.leaf(batch.rgb.values.clone());
    let rgb_prefix = tape.mean_rows(rgb);
    let depth0 = batch.depth.first().map(|g| tape.leaf(g.values.clone()));

    let needs_transcend = has(LossTerm::DepHeart)
        || has(LossTerm::DepDiamond)
        || (has(LossTerm::Psg) && cfg.psg_features == PsgFeatures::Transcended);
    // shared autoregressive paths
    let rte_ar = needs_transcend.then(|| m.rte.autoregressive(tape, &bm.rte, rgb_prefix, s));
    let de_of = |tape: &mut Tape, x: Var, r: usize, c: usize| m.de.apply(tape, &bm.de, x, r, c);
    let psg_transcended = has(LossTerm::Psg) && cfg.psg_features == PsgFeatures::Transcended;
    let de_rgb =
        (has(LossTerm::De) || has(LossTerm::DepDiamond) || psg_transcended).then(|| de_of(tape, rgb, rows, cols));
    let de_steps = match rte_ar {
        Some(r) if has(LossTerm::DepHeart) || has(LossTerm::DepDiamond) => Some(de_of(tape, r, 1, 1)),
        _ => None,
    };
    let dte_ar = match de_rgb {
        Some(g) if has(LossTerm::DepDiamond) || psg_transcended => {
            let prefix = tape.mean_rows(g);
            Some(m.dte.autoregressive(tape, &bm.dte, prefix, s))
        }
        _ => None,
    };

    let mut parts: [Option<Var>; 9] = [None; 9];

    if has(LossTerm::Psg) {
        let z = match cfg.psg_features {
            PsgFeatures::Gold => {
                let v = tape.leaf(batch.video.as_ref().ok_or_else(|| missing("video"))?.values.clone());
                let dseq = tape.leaf(batch.depth_seq.as_ref().ok_or_else(|| missing("depth sequence"))?.values.clone());
                tape.add(v, dseq)
            }
            PsgFeatures::Transcended => tape.add(rte_ar.expect("rte rollout"), dte_ar.expect("dte rollout")),
        };
        if batch.text.len() != s || batch.text.iter().any(|&t| t >= m.cfg.vocab) {
            return Err(TranscendError::Shape(format!("need {s} text targets below vocab {}", m.cfg.vocab)));
        }
        let logits = m.head.logits(tape, &bm.head, z);
        parts[0] = Some(tape.cross_entropy(logits, &batch.text));
        let gold = batch.mask.as_ref().ok_or_else(|| missing("mask"))?;
        if gold.dims() != (s, rows, cols) {
            return Err(TranscendError::Shape(format!("mask dims {:?}, expected {:?}", gold.dims(), (s, rows, cols))));
        }
        let g: Vec<f64> = gold
            .to_dense()
            .map_err(|e| TranscendError::Shape(e.to_string()))?
            .into_iter()
            .map(|b| if b { 1.0 } else { 0.0 })
            .collect();
        let p = m.head.mask_probs(tape, &bm.head, rgb, z);
        let pv = tape.value(p).data.clone();
        let iou = iou_loss_grad_raw(&pv, &g);
        let dice = dice_loss_grad_raw(&pv, &g, cfg.dice_smooth);
        let focal = focal_loss_grad_raw(&pv, &g, cfg.focal);
        parts[1] = Some(tape.fused(p, iou.value, iou.grad));
        parts[2] = Some(tape.fused(p, dice.value, dice.grad));
        parts[3] = Some(tape.fused(p, focal.value, focal.grad));
    }
    if has(LossTerm::De) {
        let target = depth0.ok_or_else(|| missing("depth"))?;
        parts[4] = Some(rho(tape, de_rgb.expect("de path"), target, mode));
    }
    if has(LossTerm::Rte) {
        let v = tape.leaf(batch.video.as_ref().ok_or_else(|| missing("video"))?.values.clone());
        let pred = m.rte.teacher_forced(tape, &bm.rte, rgb_prefix, v);
        parts[5] = Some(rho(tape, pred, v, mode));
    }
    if has(LossTerm::Dte) {
        let dseq = tape.leaf(batch.depth_seq.as_ref().ok_or_else(|| missing("depth sequence"))?.values.clone());
        let prefix = tape.mean_rows(depth0.ok_or_else(|| missing("depth"))?);
        let pred = m.dte.teacher_forced(tape, &bm.dte, prefix, dseq);
        parts[6] = Some(rho(tape, pred, dseq, mode));
    }
    if has(LossTerm::DepHeart) {
        let target = match batch.depth.len() {
            0 => return Err(missing("depth")),
            1 => {
                let p = FeatureSequence::pooled(&batch.depth)?;
                let row = p.step(0).to_vec();
                tape.leaf(Matrix { rows: s, cols: row.len(), data: row.repeat(s) })
            }
            _ => tape.leaf(FeatureSequence::pooled(&batch.depth)?.values),
        };
        parts[7] = Some(rho(tape, de_steps.expect("per-step depth"), target, mode));
    }
    if has(LossTerm::DepDiamond) {
        parts[8] = Some(rho(tape, dte_ar.expect("dte rollout"), de_steps.expect("per-step depth"), mode));
    }

    let weights = cfg.weights.as_array();
    let mut total = tape.scalar(0.0);
    let mut values = [0.0; 9];
    for (i, part) in parts.iter().enumerate() {
        if let Some(v) = part {
            values[i] = tape.scalar_value(*v);
            let w = tape.scale(*v, weights[i]);
            total = tape.add(total, w);
        }
    }
    let [txt, iou, dice, focal, de, rte, dte, dep_heart, dep_diamond] = values;
    Ok(LossGraph { total, components: LossComponents { txt, iou, dice, focal, de, rte, dte, dep_heart, dep_diamond } })
}

/// Forward-only evaluation: the components and their weighted total.
pub fn evaluate(m: &Model, batch: &TrainBatch, cfg: &LossConfig) -> Result<(LossComponents, f64), TranscendError> {
    let mut tape = Tape::new();
    let bm = BoundModel::bind(&mut tape, m);
    let g = build_losses(&mut tape, m, &bm, batch, cfg)?;
    Ok((g.components, tape.scalar_value(g.total)))
}

/// Loss and gradient of every parameter of the listed components,
/// concatenated in component then block order.
pub fn loss_and_grad(
    m: &Model,
    batch: &TrainBatch,
    cfg: &LossConfig,
    components: &[Component],
) -> Result<(LossComponents, f64, Vec<f64>), TranscendError> {
    let mut tape = Tape::new();
    let bm = BoundModel::bind(&mut tape, m);
    let g = build_losses(&mut tape, m, &bm, batch, cfg)?;
    tape.backward(g.total);
    let mut grad = Vec::new();
    for c in components {
        grad.extend(bm.get(*c).grads(&tape, m.params(*c)));
    }
    Ok((g.components, tape.scalar_value(g.total), grad))
}

/// `(L_heart, L_diamond)` for the given estimators. `depth` holds one grid
/// or one per step.
pub fn consistency_losses(
    de: &DepthEstimator,
    rte: &TemporalEstimator,
    dte: &TemporalEstimator,
    rgb: &FeatureGrid,
    depth: &[FeatureGrid],
    steps: usize,
    mode: Regression,
) -> Result<(f64, f64), TranscendError> {
    let heads = rte.heads;
    let cfg =
        ModelConfig { dim: rte.dim, layers: rte.layers, heads, steps, regression: mode, ..ModelConfig::default() };
    let mut head_rng = ChaCha8Rng::seed_from_u64(0);
    let m = Model {
        cfg,
        de: de.clone(),
        rte: rte.clone(),
        dte: dte.clone(),
        head: ToyHead::new(rte.dim, cfg.vocab, &mut head_rng),
    };
    let batch = TrainBatch {
        rgb: rgb.clone(),
        depth: depth.to_vec(),
        video: None,
        depth_seq: None,
        text: Vec::new(),
        mask: None,
    };
    let lc = LossConfig { terms: [LossTerm::DepHeart, LossTerm::DepDiamond].into(), ..LossConfig::default() };
    let (c, _) = evaluate(&m, &batch, &lc)?;
    Ok((c.dep_heart, c.dep_diamond))
}
