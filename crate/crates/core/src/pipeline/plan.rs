use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::transcend::{Component, LossTerm, LossWeights, ModelConfig, PsgFeatures, Schedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StepId {
    #[serde(rename = "1")]
    S1,
    #[serde(rename = "2a")]
    S2a,
    #[serde(rename = "2b")]
    S2b,
    #[serde(rename = "2c")]
    S2c,
    #[serde(rename = "3")]
    S3,
    #[serde(rename = "4")]
    S4,
    #[serde(rename = "5")]
    S5,
}

impl StepId {
    pub const ALL: [StepId; 7] =
        [StepId::S1, StepId::S2a, StepId::S2b, StepId::S2c, StepId::S3, StepId::S4, StepId::S5];

    /// The numbered step; the three step-2 subprocesses share 2.
    pub fn major(self) -> u8 {
        match self {
            StepId::S1 => 1,
            StepId::S2a | StepId::S2b | StepId::S2c => 2,
            StepId::S3 => 3,
            StepId::S4 => 4,
            StepId::S5 => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StepId::S1 => "1",
            StepId::S2a => "2a",
            StepId::S2b => "2b",
            StepId::S2c => "2c",
            StepId::S3 => "3",
            StepId::S4 => "4",
            StepId::S5 => "5",
        }
    }
}

impl fmt::Display for StepId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataRole {
    Rgb,
    Depth,
    Video,
    DepthSequence,
    /// 4D scene-graph annotations (text targets and mask tubes).
    SgAnnotations,
    /// Static-image scene graphs.
    Sg2d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    #[default]
    Cosine,
    InverseSqrt,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepHyper {
    pub updates: u64,
    /// Learning rate of the language head; required when it is trainable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm_lr: Option<f64>,
    /// Learning rate of the estimators.
    pub visual_lr: f64,
    pub weight_decay: f64,
    #[serde(default)]
    pub schedule: ScheduleKind,
    pub warmup: u64,
    #[serde(default)]
    pub min_ratio: f64,
}

impl StepHyper {
    pub fn schedule(&self) -> Schedule {
        match self.schedule {
            ScheduleKind::Cosine => {
                Schedule::Cosine { warmup: self.warmup, total: self.updates, min_ratio: self.min_ratio }
            }
            ScheduleKind::InverseSqrt => Schedule::InverseSqrt { warmup: self.warmup },
            ScheduleKind::Constant => Schedule::Constant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StagePlan {
    pub id: StepId,
    pub terms: BTreeSet<LossTerm>,
    #[serde(default)]
    pub psg_features: PsgFeatures,
    /// Dataset name to the roles it supplies.
    pub data: BTreeMap<String, Vec<DataRole>>,
    pub trainable: Vec<Component>,
    pub hyper: StepHyper,
    /// Copy the temporal RGB estimator into the depth one before training.
    #[serde(default)]
    pub init_dte_from_rte: bool,
}

impl StagePlan {
    fn bound(&self, role: DataRole) -> bool {
        self.data.values().any(|roles| roles.contains(&role))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Plan {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    /// Pixels per feature-grid cell side.
    pub patch: usize,
    #[serde(default)]
    pub feature_seed: u64,
    #[serde(default)]
    pub weights: LossWeights,
    pub steps: Vec<StagePlan>,
}

impl Plan {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plans serialize")
    }

    /// Distinct numbered steps in plan order.
    pub fn majors(&self) -> Vec<u8> {
        let mut out: Vec<u8> = Vec::new();
        for s in &self.steps {
            if out.last() != Some(&s.id.major()) {
                out.push(s.id.major());
            }
        }
        out
    }
}

/// Roles a loss term reads from one dataset.
pub fn required_roles(term: LossTerm, features: PsgFeatures) -> &'static [DataRole] {
    use DataRole::*;
    match (term, features) {
        (LossTerm::Psg, PsgFeatures::Gold) => &[SgAnnotations],
        (LossTerm::Psg, PsgFeatures::Transcended) => &[Rgb],
        (LossTerm::De, _) | (LossTerm::DepHeart, _) => &[Rgb, Depth],
        (LossTerm::Rte, _) => &[Video],
        (LossTerm::Dte, _) => &[DepthSequence],
        (LossTerm::DepDiamond, _) => &[Rgb],
    }
}

/// Whether `roles` from one dataset are enough for `term`.
pub fn supports(roles: &[DataRole], term: LossTerm, features: PsgFeatures) -> bool {
    let base = required_roles(term, features).iter().all(|r| roles.contains(r));
    if term == LossTerm::Psg && features == PsgFeatures::Transcended {
        base && (roles.contains(&DataRole::SgAnnotations) || roles.contains(&DataRole::Sg2d))
    } else {
        base
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanViolation {
    pub severity: Severity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<StepId>,
    pub message: String,
}

impl fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        match self.step {
            Some(s) => write!(f, "{sev}: step {s}: {}", self.message),
            None => write!(f, "{sev}: {}", self.message),
        }
    }
}

/// Structural checks of a plan. An empty result means the plan is sound;
/// warnings alone do not block a run.
pub fn validate_plan(plan: &Plan) -> Vec<PlanViolation> {
    let mut out = Vec::new();
    let mut err =
        |step: Option<StepId>, message: String| out.push(PlanViolation { severity: Severity::Error, step, message });
    if let Err(e) = plan.model.validate() {
        err(None, e.to_string());
    }
    if plan.patch == 0 {
        err(None, "patch must be positive".into());
    }
    if plan.steps.is_empty() {
        err(None, "plan has no steps".into());
    }
    let mut seen = BTreeSet::new();
    let mut last_major = 0;
    for s in &plan.steps {
        let id = Some(s.id);
        if !seen.insert(s.id) {
            err(id, "appears twice".into());
        }
        if s.id.major() < last_major {
            err(id, format!("comes after step {last_major}"));
        }
        last_major = last_major.max(s.id.major());

        let h = &s.hyper;
        if h.updates == 0 {
            err(id, "needs at least one update".into());
        }
        for (name, v) in
            [("visual_lr", Some(h.visual_lr)), ("llm_lr", h.llm_lr), ("weight_decay", Some(h.weight_decay))]
        {
            if let Some(v) = v {
                if !(v.is_finite() && v >= 0.0) {
                    err(id, format!("{name} must be finite and non-negative, got {v}"));
                }
            }
        }
        if !(0.0..=1.0).contains(&h.min_ratio) {
            err(id, format!("min_ratio must lie in [0, 1], got {}", h.min_ratio));
        }
        if s.trainable.is_empty() {
            err(id, "trains no component".into());
        }
        if s.trainable.contains(&Component::Head) && h.llm_lr.is_none() {
            err(id, "trains the head but sets no llm_lr".into());
        }
        if s.terms.is_empty() {
            err(id, "has no loss terms".into());
        }
        for &t in &s.terms {
            if !s.data.values().any(|roles| supports(roles, t, s.psg_features)) {
                let need: Vec<String> =
                    required_roles(t, s.psg_features).iter().map(|r| format!("{r:?}").to_lowercase()).collect();
                err(id, format!("loss term {t:?} has no dataset binding {}", need.join(" + ")));
            }
        }
        let structural: &[&[DataRole]] = match s.id {
            StepId::S1 | StepId::S5 => &[&[DataRole::SgAnnotations]],
            StepId::S2a => &[&[DataRole::Rgb, DataRole::Depth]],
            StepId::S2b => &[&[DataRole::Video]],
            StepId::S2c => &[&[DataRole::DepthSequence]],
            StepId::S3 => &[&[DataRole::Rgb], &[DataRole::Depth], &[DataRole::Video], &[DataRole::DepthSequence]],
            StepId::S4 => &[&[DataRole::Sg2d]],
        };
        for roles in structural {
            let ok = if roles.len() == 1 {
                s.bound(roles[0])
            } else {
                s.data.values().any(|bound| roles.iter().all(|r| bound.contains(r)))
            };
            if !ok {
                let names: Vec<String> = roles.iter().map(|r| format!("{r:?}").to_lowercase()).collect();
                err(id, format!("must bind {}", names.join(" + ")));
            }
        }
    }

    // step-2 subprocesses start from the same snapshot and are merged
    let mut owners: BTreeMap<Component, StepId> = BTreeMap::new();
    for s in plan.steps.iter().filter(|s| s.id.major() == 2) {
        for c in &s.trainable {
            if let Some(prev) = owners.insert(*c, s.id) {
                err(Some(s.id), format!("trains {c} which step {prev} also trains"));
            }
        }
    }

    let majors = plan.majors();
    for m in 1..=4u8 {
        if !majors.contains(&m) {
            out.push(PlanViolation {
                severity: Severity::Warning,
                step: None,
                message: format!("plan skips step {m}"),
            });
        }
    }
    out
}

pub fn has_errors(v: &[PlanViolation]) -> bool {
    v.iter().any(|v| v.severity == Severity::Error)
}

fn hyper(updates: u64, llm_lr: Option<f64>, visual_lr: f64, weight_decay: f64) -> StepHyper {
    StepHyper { updates, llm_lr, visual_lr, weight_decay, schedule: ScheduleKind::Cosine, warmup: 500, min_ratio: 0.0 }
}

fn bind(pairs: &[(&str, &[DataRole])]) -> BTreeMap<String, Vec<DataRole>> {
    pairs.iter().map(|(n, r)| (n.to_string(), r.to_vec())).collect()
}

/// The five-step recipe with the published optimizer settings, at the
/// default toy model size. Step 5 reuses step 1's settings.
pub fn default_plan() -> Plan {
    use DataRole::*;
    use LossTerm::*;
    let updates = 20;
    let all = vec![Component::De, Component::Rte, Component::Dte, Component::Head];
    let sg_step = |id| StagePlan {
        id,
        terms: [Psg].into(),
        psg_features: PsgFeatures::Gold,
        data: bind(&[("psg4d", &[SgAnnotations])]),
        trainable: vec![Component::Head],
        hyper: hyper(updates, Some(5e-5), 5e-4, 0.05),
        init_dte_from_rte: false,
    };
    let sub = |id, term, comp, data: &[(&str, &[DataRole])], lr| StagePlan {
        id,
        terms: [term].into(),
        psg_features: PsgFeatures::Gold,
        data: bind(data),
        trainable: vec![comp],
        hyper: hyper(updates, None, lr, 0.1),
        init_dte_from_rte: id == StepId::S2c,
    };
    Plan {
        seed: 0,
        model: ModelConfig::default(),
        patch: 2,
        feature_seed: 0,
        weights: LossWeights::default(),
        steps: vec![
            sg_step(StepId::S1),
            sub(StepId::S2a, De, Component::De, &[("diml", &[Rgb, Depth])], 2e-3),
            sub(StepId::S2b, Rte, Component::Rte, &[("ag", &[Video])], 5e-3),
            sub(StepId::S2c, Dte, Component::Dte, &[("psg4d", &[DepthSequence])], 2e-4),
            StagePlan {
                id: StepId::S3,
                terms: [Psg, De, Rte, Dte, DepHeart, DepDiamond].into(),
                psg_features: PsgFeatures::Transcended,
                data: bind(&[("psg4d", &[Rgb, Depth, Video, DepthSequence, SgAnnotations])]),
                trainable: all.clone(),
                hyper: hyper(updates, Some(5e-5), 2e-4, 0.05),
                init_dte_from_rte: false,
            },
            StagePlan {
                id: StepId::S4,
                terms: [Psg].into(),
                psg_features: PsgFeatures::Transcended,
                data: bind(&[("psg", &[Rgb, Sg2d]), ("vg", &[Rgb, Sg2d])]),
                trainable: all,
                hyper: hyper(updates, Some(5e-5), 5e-4, 0.05),
                init_dte_from_rte: false,
            },
            sg_step(StepId::S5),
        ],
    }
}

/// The default recipe shrunk for quick runs: d = 8, one layer, two steps,
/// four updates per step, short warmup and larger learning rates.
pub fn toy_plan() -> Plan {
    let mut p = default_plan();
    p.model = ModelConfig { dim: 8, layers: 1, heads: 2, ff_mult: 2, steps: 2, vocab: 10, ..ModelConfig::default() };
    for s in &mut p.steps {
        s.hyper.updates = 4;
        s.hyper.warmup = 1;
        s.hyper.visual_lr *= 20.0;
        s.hyper.llm_lr = s.hyper.llm_lr.map(|v| v * 20.0);
    }
    p
}

/// `plan` with every subprocess of numbered step `major` removed.
pub fn without_step(plan: &Plan, major: u8) -> Plan {
    let mut p = plan.clone();
    p.steps.retain(|s| s.id.major() != major);
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_plan_is_clean() {
        assert_eq!(validate_plan(&default_plan()), vec![]);
        assert_eq!(validate_plan(&toy_plan()), vec![]);
        assert_eq!(default_plan().majors(), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn missing_depth_binding() {
        let mut p = default_plan();
        p.steps[1].data = bind(&[("diml", &[DataRole::Rgb])]);
        let v = validate_plan(&p);
        assert!(has_errors(&v));
        assert!(v.iter().any(|v| v.step == Some(StepId::S2a) && v.message.contains("rgb + depth")), "{v:?}");
    }

    #[test]
    fn skipping_steps_warns() {
        for m in [2, 3] {
            let v = validate_plan(&without_step(&default_plan(), m));
            assert_eq!(v.len(), 1, "{v:?}");
            assert_eq!(v[0].severity, Severity::Warning);
            assert!(v[0].message.contains(&format!("step {m}")));
        }
    }

    #[test]
    fn ordering_and_overlap() {
        let mut p = default_plan();
        p.steps.swap(0, 4);
        assert!(has_errors(&validate_plan(&p)));
        let mut p = default_plan();
        p.steps.swap(1, 3);
        assert_eq!(validate_plan(&p), vec![]);
        let mut p = default_plan();
        p.steps[2].trainable.push(Component::De);
        assert!(validate_plan(&p).iter().any(|v| v.message.contains("also trains")));
    }

    #[test]
    fn toml_round_trip() {
        let p = default_plan();
        assert_eq!(Plan::from_toml(&p.to_toml()).unwrap(), p);
        let bad = p.to_toml().replacen("patch = 2", "patch = 2\nbogus = 1", 1);
        assert!(Plan::from_toml(&bad).is_err());
    }
}
