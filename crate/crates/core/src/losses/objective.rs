use serde::{Deserialize, Serialize};

use super::{
    cross_entropy, feature_distillation, lwf_mc_loss, standard_distillation,
    unbiased_cross_entropy, unbiased_distillation, LossContext, LossEval, LwfMcVariant,
    LwfMcWeights,
};
use crate::exec::{map_ordered, ExecMode};
use crate::labels::{ClassId, Mask};
use crate::model::{HeadInit, SegModel};
use crate::numerics::{Tape, Tensor, Var};
use crate::regularizers::{quadratic_penalty, ImportanceState, PriorKind};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupervisedLoss {
    Standard,
    Unbiased,
    LwfMc(LwfMcVariant),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillLoss {
    None,
    Standard,
    Unbiased,
}

/// Everything that distinguishes one training method from another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub name: String,
    pub supervised: SupervisedLoss,
    pub distill: DistillLoss,
    /// Weight of the output distillation term.
    pub lambda: f64,
    /// Weight of the feature distillation term.
    pub feature_weight: f64,
    pub lwf_mc: LwfMcWeights,
    pub prior: Option<PriorKind>,
    pub prior_weight: f64,
    pub init: HeadInit,
    /// Trains every step's classes at once (upper bound).
    pub joint: bool,
}

pub const METHOD_NAMES: &[&str] = &[
    "FT", "LwF", "LwF-MC", "LwF-MC-C", "LwF-MC-D", "ILT", "EWC", "PI", "RW", "MiB", "LwF+CE",
    "LwF+CE+KD", "Joint",
];

impl MethodConfig {
    fn base(name: &str) -> Self {
        Self {
            name: name.to_string(),
            supervised: SupervisedLoss::Standard,
            distill: DistillLoss::None,
            lambda: 0.0,
            feature_weight: 0.0,
            lwf_mc: LwfMcWeights::default(),
            prior: None,
            prior_weight: 0.0,
            init: HeadInit::Random,
            joint: false,
        }
    }

    /// Parses `Name` or `Name@weight`, the latter overriding the method
    /// weight and keeping the whole string as the name.
    pub fn from_spec(spec: &str) -> Result<Self> {
        let Some((name, w)) = spec.split_once('@') else {
            return Self::preset(spec);
        };
        let w: f64 = w
            .parse()
            .map_err(|_| Error::Config(format!("bad weight in method {spec:?}")))?;
        let base = Self::preset(name)?;
        if base.method_weight().is_none() {
            return Err(Error::Config(format!("{name} has no weight to set")));
        }
        let mut m = base.with_method_weight(w);
        m.name = spec.to_string();
        m.validate()?;
        Ok(m)
    }

    /// Default configuration of a named method.
    pub fn preset(name: &str) -> Result<Self> {
        let mut m = Self::base(name);
        match name {
            "FT" => {}
            "Joint" => m.joint = true,
            "LwF" => {
                m.distill = DistillLoss::Standard;
                m.lambda = 100.0;
            }
            "LwF-MC" | "LwF-MC-C" | "LwF-MC-D" => {
                let variant = match name {
                    "LwF-MC" => LwfMcVariant::Full,
                    "LwF-MC-C" => LwfMcVariant::C,
                    _ => LwfMcVariant::D,
                };
                m.supervised = SupervisedLoss::LwfMc(variant);
                m.lwf_mc.distill = 10.0;
            }
            "ILT" => {
                m.distill = DistillLoss::Standard;
                m.lambda = 100.0;
                m.feature_weight = 100.0;
            }
            "EWC" | "PI" | "RW" => {
                let (kind, w) = match name {
                    "EWC" => (PriorKind::Ewc, 500.0),
                    "PI" => (PriorKind::Pi, 500.0),
                    _ => (PriorKind::Rw, 100.0),
                };
                m.prior = Some(kind);
                m.prior_weight = w;
            }
            // ablation rows share the MiB weight so each row toggles one component
            "LwF+CE" => {
                m.supervised = SupervisedLoss::Unbiased;
                m.distill = DistillLoss::Standard;
                m.lambda = 10.0;
            }
            "LwF+CE+KD" => {
                m.supervised = SupervisedLoss::Unbiased;
                m.distill = DistillLoss::Unbiased;
                m.lambda = 10.0;
            }
            "MiB" => {
                m.supervised = SupervisedLoss::Unbiased;
                m.distill = DistillLoss::Unbiased;
                m.lambda = 10.0;
                m.init = HeadInit::Background;
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown method {other:?}; expected one of {METHOD_NAMES:?}"
                )))
            }
        }
        Ok(m)
    }

    /// The single weight tuned by hyper-parameter selection, if any.
    pub fn method_weight(&self) -> Option<f64> {
        if matches!(self.supervised, SupervisedLoss::LwfMc(_)) {
            Some(self.lwf_mc.distill)
        } else if self.prior.is_some() {
            Some(self.prior_weight)
        } else if self.distill != DistillLoss::None {
            Some(self.lambda)
        } else {
            None
        }
    }

    pub fn with_method_weight(&self, w: f64) -> Self {
        let mut m = self.clone();
        if matches!(m.supervised, SupervisedLoss::LwfMc(_)) {
            m.lwf_mc.distill = w;
        } else if m.prior.is_some() {
            m.prior_weight = w;
        } else if m.distill != DistillLoss::None {
            m.lambda = w;
            if m.feature_weight > 0.0 {
                m.feature_weight = w;
            }
        }
        m
    }

    /// Whether steps after the first need the previous model.
    pub fn needs_old_model(&self) -> bool {
        !self.joint
            && ((self.distill != DistillLoss::None && self.lambda > 0.0)
                || self.feature_weight > 0.0
                || matches!(self.supervised, SupervisedLoss::LwfMc(_)))
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [self.lambda, self.feature_weight, self.prior_weight, self.lwf_mc.cls, self.lwf_mc.kd, self.lwf_mc.distill];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!(
                "method {} has a negative or non-finite weight",
                self.name
            )));
        }
        Ok(())
    }
}

/// Forward-only outputs of the previous step's model on one image.
#[derive(Debug, Clone)]
pub struct OldOutputs {
    pub logits: Tensor,
    pub probs: Tensor,
    pub features: Tensor,
    pub class_order: Vec<ClassId>,
}

impl OldOutputs {
    pub fn compute(old_model: &SegModel, image: &Tensor) -> Result<Self> {
        let out = old_model.forward(image)?;
        Ok(Self {
            logits: out.logits,
            probs: out.probs.values,
            features: out.features,
            class_order: out.probs.class_order,
        })
    }
}

/// Objective value and its gradient for every model parameter, in
/// [`SegModel::param_names`] order.
#[derive(Debug, Clone)]
pub struct ImageObjective {
    pub value: f64,
    pub grads: Vec<Tensor>,
}

fn push_term(tape: &mut Tape, terms: &mut Vec<Var>, input: Var, weight: f64, eval: LossEval) -> Result<()> {
    if weight == 0.0 {
        return Ok(());
    }
    let mut grad = eval.grad;
    grad.scale_in_place(weight);
    let v = tape.scalar_fn(&[input], weight * eval.value, vec![grad])?;
    terms.push(v);
    Ok(())
}

/// Objective of a single image. `ctx` is `None` during the first step, in
/// which case every method trains with plain cross-entropy.
pub fn image_objective(
    method: &MethodConfig,
    ctx: Option<&LossContext>,
    model: &SegModel,
    image: &Tensor,
    mask: &Mask,
    old: Option<&OldOutputs>,
) -> Result<ImageObjective> {
    let mut tape = Tape::new();
    let fwd = model.forward_on_tape(&mut tape, image, true)?;
    let classes = model.known_classes();
    let logits = tape.value(fwd.logits).clone();
    let mut terms = Vec::new();

    match ctx {
        Some(ctx) if !method.joint => {
            let need_old = || {
                old.ok_or_else(|| {
                    Error::Config(format!(
                        "method {} needs the previous model after the first step",
                        method.name
                    ))
                })
            };
            let sup = match method.supervised {
                SupervisedLoss::Standard => cross_entropy(&logits, mask, classes)?,
                SupervisedLoss::Unbiased => unbiased_cross_entropy(&logits, mask, classes, ctx)?,
                SupervisedLoss::LwfMc(variant) => {
                    let o = need_old()?;
                    lwf_mc_loss(&logits, mask, classes, &o.logits, &o.class_order, variant, method.lwf_mc, ctx)?
                }
            };
            push_term(&mut tape, &mut terms, fwd.logits, 1.0, sup)?;
            if method.lambda > 0.0 && method.distill != DistillLoss::None {
                let o = need_old()?;
                let kd = match method.distill {
                    DistillLoss::Standard => standard_distillation(&logits, classes, &o.probs, &o.class_order)?,
                    _ => unbiased_distillation(&logits, classes, &o.probs, &o.class_order, ctx)?,
                };
                push_term(&mut tape, &mut terms, fwd.logits, method.lambda, kd)?;
            }
            if method.feature_weight > 0.0 {
                let o = need_old()?;
                let fd = feature_distillation(tape.value(fwd.features), &o.features)?;
                push_term(&mut tape, &mut terms, fwd.features, method.feature_weight, fd)?;
            }
        }
        _ => {
            let ce = cross_entropy(&logits, mask, classes)?;
            push_term(&mut tape, &mut terms, fwd.logits, 1.0, ce)?;
        }
    }

    let mut root = terms[0];
    for &t in &terms[1..] {
        root = tape.add(root, t)?;
    }
    let value = tape.value(root).item();
    let mut grads = tape.backward(root)?;
    let grads = fwd
        .params
        .iter()
        .zip(model.params())
        .map(|(&v, p)| grads.take_or_zeros(v, p.shape()))
        .collect();
    Ok(ImageObjective { value, grads })
}

/// Batch-mean objective plus the prior penalty, with gradients. Images are
/// processed independently under `mode` and reduced in batch order.
pub fn composite_objective(
    method: &MethodConfig,
    ctx: Option<&LossContext>,
    batch: &[(Tensor, Mask)],
    model: &SegModel,
    old_model: Option<&SegModel>,
    prior: Option<&ImportanceState>,
    mode: ExecMode,
) -> Result<ImageObjective> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let incremental = ctx.is_some() && !method.joint;
    if incremental && method.needs_old_model() && old_model.is_none() {
        return Err(Error::Config(format!(
            "method {} needs the previous model after the first step",
            method.name
        )));
    }
    let per_image = map_ordered(mode, batch, |(image, mask)| {
        let old = match old_model {
            Some(m) if incremental && method.needs_old_model() => Some(OldOutputs::compute(m, image)?),
            _ => None,
        };
        image_objective(method, ctx, model, image, mask, old.as_ref())
    });
    let mut value = 0.0;
    let mut grads: Vec<Tensor> = model.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
    let inv = 1.0 / batch.len() as f64;
    for r in per_image {
        let r = r?;
        value += r.value * inv;
        for (acc, g) in grads.iter_mut().zip(&r.grads) {
            acc.axpy(inv, g)?;
        }
    }
    if incremental && method.prior.is_some() && method.prior_weight > 0.0 {
        let state = prior.ok_or_else(|| {
            Error::Config(format!("method {} needs an importance state", method.name))
        })?;
        let pen = quadratic_penalty(model, state, method.prior_weight)?;
        value += pen.value;
        for (acc, g) in grads.iter_mut().zip(&pen.grads) {
            acc.axpy(1.0, g)?;
        }
    }
    Ok(ImageObjective { value, grads })
}
