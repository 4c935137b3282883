//! The loss family. Every loss is a pure function of its inputs returning the
//! scalar value together with its gradient, so it can be recorded on a tape
//! with [`crate::numerics::Tape::scalar_fn`].
//!
//! Cross-entropy and both distillation variants reduce to per-pixel terms of
//! the form `log( mass(S) / mass(T) )` for channel subsets `S ⊆ T`, where
//! `mass(S) = Σ_{c∈S} softmax(z)_c`. Each term is evaluated as
//! `lse(z_S) − lse(z_T)` and has gradient `softmax_S(z) − softmax_T(z)`.

mod objective;

pub use objective::{
    composite_objective, image_objective, DistillLoss, ImageObjective, MethodConfig, METHOD_NAMES,
    OldOutputs, SupervisedLoss,
};

use serde::{Deserialize, Serialize};

use crate::labels::{ClassId, ClassIndex, Mask, BACKGROUND};
use crate::numerics::{kernels::log_sum_exp, Tensor, PROB_FLOOR};
use crate::{Error, Result};

/// Scalar loss value and its gradient with respect to the primary input.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub value: f64,
    pub grad: Tensor,
}

/// Label sets of the current learning step.
#[derive(Debug, Clone, PartialEq)]
pub struct LossContext {
    /// `Y^{t-1}`, background included.
    pub old_classes: Vec<ClassId>,
    /// `C^t`, background included.
    pub new_classes: Vec<ClassId>,
    pub background: ClassId,
}

impl LossContext {
    pub fn new(old_classes: &[ClassId], new_foreground: &[ClassId]) -> Result<Self> {
        let mut old = old_classes.to_vec();
        if !old.contains(&BACKGROUND) {
            old.insert(0, BACKGROUND);
        }
        let mut new = vec![BACKGROUND];
        for &c in new_foreground {
            if c == BACKGROUND || old.contains(&c) || new.contains(&c) {
                return Err(Error::ScheduleViolation(format!(
                    "class {c} cannot be new at this step"
                )));
            }
            new.push(c);
        }
        Ok(Self {
            old_classes: old,
            new_classes: new,
            background: BACKGROUND,
        })
    }

    /// `Y^t = Y^{t-1} ∪ C^t`.
    pub fn all_classes(&self) -> Vec<ClassId> {
        let mut all = self.old_classes.clone();
        all.extend(self.new_classes.iter().filter(|&&c| c != self.background));
        all
    }
}

/// Variants of the multi-label binary cross-entropy baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LwfMcVariant {
    /// Background supervised by both the ground truth and the old model.
    Full,
    /// Background supervised by the ground truth only.
    C,
    /// Background supervised by the old model only.
    D,
}

impl std::str::FromStr for LwfMcVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" | "Full" => Ok(Self::Full),
            "C" | "c" => Ok(Self::C),
            "D" | "d" => Ok(Self::D),
            other => Err(Error::Config(format!("unknown LwF-MC variant {other:?}"))),
        }
    }
}

/// Weights of the binary cross-entropy terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LwfMcWeights {
    /// Background ground-truth term.
    pub cls: f64,
    /// Background old-model term.
    pub kd: f64,
    /// Multiplies every term whose target comes from the old model.
    pub distill: f64,
}

impl Default for LwfMcWeights {
    fn default() -> Self {
        Self {
            cls: 1.0,
            kd: 1.0,
            distill: 1.0,
        }
    }
}

fn log_clamped(x: f64) -> f64 {
    x.max(PROB_FLOOR.ln())
}

fn pixel_count(logits: &Tensor, k: usize) -> Result<usize> {
    let s = logits.shape();
    if s.len() != 3 || s[2] != k {
        return Err(Error::Alignment(format!(
            "logits {:?} do not match {} classes",
            s, k
        )));
    }
    Ok(s[0] * s[1])
}

fn check_mask(mask: &Mask, logits: &Tensor) -> Result<()> {
    let s = logits.shape();
    if mask.height() != s[0] || mask.width() != s[1] {
        return Err(Error::Alignment(format!(
            "mask {}x{} vs logits {:?}",
            mask.height(),
            mask.width(),
            s
        )));
    }
    Ok(())
}

/// Per-pixel workspace for `log mass(S) − log mass(T)` terms.
struct PixelTerms<'a> {
    z: &'a [f64],
    grad: &'a mut [f64],
    lse_all: f64,
}

impl<'a> PixelTerms<'a> {
    fn new(z: &'a [f64], grad: &'a mut [f64]) -> Self {
        let lse_all = log_sum_exp(z);
        Self { z, grad, lse_all }
    }

    fn lse(&self, set: &[usize]) -> f64 {
        let m = set.iter().map(|&i| self.z[i]).fold(f64::NEG_INFINITY, f64::max);
        m + set.iter().map(|&i| (self.z[i] - m).exp()).sum::<f64>().ln()
    }

    /// Adds `−weight · clamp(log mass(S)/mass(T))` to the gradient buffer
    /// (scaled by `scale`) and returns the un-scaled loss contribution.
    /// `None` for `T` means every channel.
    fn neg_log_ratio(&mut self, weight: f64, s: &[usize], t: Option<&[usize]>, scale: f64) -> f64 {
        if weight == 0.0 {
            return 0.0;
        }
        let lse_s = if s.len() == 1 { self.z[s[0]] } else { self.lse(s) };
        let lse_t = match t {
            Some(t) => self.lse(t),
            None => self.lse_all,
        };
        let raw = lse_s - lse_t;
        let value = log_clamped(raw);
        if raw > PROB_FLOOR.ln() {
            let coef = -weight * scale;
            for &i in s {
                self.grad[i] += coef * (self.z[i] - lse_s).exp();
            }
            match t {
                Some(t) => {
                    for &i in t {
                        self.grad[i] -= coef * (self.z[i] - lse_t).exp();
                    }
                }
                None => {
                    for (i, g) in self.grad.iter_mut().enumerate() {
                        *g -= coef * (self.z[i] - lse_t).exp();
                    }
                }
            }
        }
        -weight * value
    }
}

/// Standard pixel-averaged cross-entropy over all channels.
pub fn cross_entropy(logits: &Tensor, mask: &Mask, classes: &[ClassId]) -> Result<LossEval> {
    let index = ClassIndex::new(classes)?;
    let k = classes.len();
    let n = pixel_count(logits, k)?;
    check_mask(mask, logits)?;
    let mut grad = Tensor::zeros(logits.shape());
    let scale = 1.0 / n as f64;
    let mut total = 0.0;
    for ((z, g), &y) in logits
        .data()
        .chunks(k)
        .zip(grad.data_mut().chunks_mut(k))
        .zip(mask.labels())
    {
        let yi = index
            .position(y)
            .ok_or_else(|| Error::LabelDomain(format!("label {y} is not among {classes:?}")))?;
        total += PixelTerms::new(z, g).neg_log_ratio(1.0, &[yi], None, scale);
    }
    Ok(LossEval {
        value: total * scale,
        grad,
    })
}

/// Cross-entropy where the background target is matched against the total
/// probability of the background and every old class.
pub fn unbiased_cross_entropy(
    logits: &Tensor,
    mask: &Mask,
    classes: &[ClassId],
    ctx: &LossContext,
) -> Result<LossEval> {
    let index = ClassIndex::new(classes)?;
    let k = classes.len();
    let n = pixel_count(logits, k)?;
    check_mask(mask, logits)?;
    let old = index.positions(&ctx.old_classes)?;
    let mut grad = Tensor::zeros(logits.shape());
    let scale = 1.0 / n as f64;
    let mut total = 0.0;
    for ((z, g), &y) in logits
        .data()
        .chunks(k)
        .zip(grad.data_mut().chunks_mut(k))
        .zip(mask.labels())
    {
        let mut terms = PixelTerms::new(z, g);
        total += if y == ctx.background {
            terms.neg_log_ratio(1.0, &old, None, scale)
        } else if ctx.new_classes.contains(&y) {
            let yi = index.position(y).ok_or_else(|| {
                Error::LabelDomain(format!("label {y} is not among {classes:?}"))
            })?;
            terms.neg_log_ratio(1.0, &[yi], None, scale)
        } else {
            return Err(Error::LabelDomain(format!(
                "label {y} is not a class of the current step {:?}",
                ctx.new_classes
            )));
        };
    }
    Ok(LossEval {
        value: total * scale,
        grad,
    })
}

fn old_alignment(
    logits: &Tensor,
    old_probs: &Tensor,
    old_order: &[ClassId],
    classes: &[ClassId],
) -> Result<(ClassIndex, Vec<usize>)> {
    let index = ClassIndex::new(classes)?;
    let old_pos = index.positions(old_order)?;
    let (ls, os) = (logits.shape(), old_probs.shape());
    if os.len() != 3 || os[..2] != ls[..2] || os[2] != old_order.len() {
        return Err(Error::Alignment(format!(
            "old probabilities {:?} vs logits {:?} with {} old classes",
            os,
            ls,
            old_order.len()
        )));
    }
    Ok((index, old_pos))
}

/// Distillation against the current probabilities renormalised over the
/// old classes (new classes get zero probability).
pub fn standard_distillation(
    logits: &Tensor,
    classes: &[ClassId],
    old_probs: &Tensor,
    old_order: &[ClassId],
) -> Result<LossEval> {
    let k = classes.len();
    let n = pixel_count(logits, k)?;
    let (_, old_pos) = old_alignment(logits, old_probs, old_order, classes)?;
    let ko = old_order.len();
    let mut grad = Tensor::zeros(logits.shape());
    let scale = 1.0 / n as f64;
    let mut total = 0.0;
    for ((z, g), q_old) in logits
        .data()
        .chunks(k)
        .zip(grad.data_mut().chunks_mut(k))
        .zip(old_probs.data().chunks(ko))
    {
        let mut terms = PixelTerms::new(z, g);
        for (j, &pos) in old_pos.iter().enumerate() {
            total += terms.neg_log_ratio(q_old[j], &[pos], Some(&old_pos), scale);
        }
    }
    Ok(LossEval {
        value: total * scale,
        grad,
    })
}

/// Distillation where the old background is matched against the total
/// probability of the background and every new class.
pub fn unbiased_distillation(
    logits: &Tensor,
    classes: &[ClassId],
    old_probs: &Tensor,
    old_order: &[ClassId],
    ctx: &LossContext,
) -> Result<LossEval> {
    let k = classes.len();
    let n = pixel_count(logits, k)?;
    let (index, old_pos) = old_alignment(logits, old_probs, old_order, classes)?;
    let new_pos = index.positions(&ctx.new_classes)?;
    let ko = old_order.len();
    let mut grad = Tensor::zeros(logits.shape());
    let scale = 1.0 / n as f64;
    let mut total = 0.0;
    for ((z, g), q_old) in logits
        .data()
        .chunks(k)
        .zip(grad.data_mut().chunks_mut(k))
        .zip(old_probs.data().chunks(ko))
    {
        let mut terms = PixelTerms::new(z, g);
        for (j, (&pos, &c)) in old_pos.iter().zip(old_order).enumerate() {
            total += if c == ctx.background {
                terms.neg_log_ratio(q_old[j], &new_pos, None, scale)
            } else {
                terms.neg_log_ratio(q_old[j], &[pos], None, scale)
            };
        }
    }
    Ok(LossEval {
        value: total * scale,
        grad,
    })
}

/// Binary cross-entropy of `sigmoid(z)` against `target`, and its
/// derivative with respect to `z`.
fn bce_with_logit(z: f64, target: f64) -> (f64, f64) {
    let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
    let sig = 1.0 / (1.0 + (-z).exp());
    (softplus - target * z, sig - target)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Multi-label binary cross-entropy: new classes against the ground truth,
/// old classes against the old model's sigmoids, background per `variant`.
/// Averaged over pixels and classes.
#[allow(clippy::too_many_arguments)]
pub fn lwf_mc_loss(
    logits: &Tensor,
    mask: &Mask,
    classes: &[ClassId],
    old_logits: &Tensor,
    old_order: &[ClassId],
    variant: LwfMcVariant,
    weights: LwfMcWeights,
    ctx: &LossContext,
) -> Result<LossEval> {
    let k = classes.len();
    let n = pixel_count(logits, k)?;
    check_mask(mask, logits)?;
    let (index, old_pos) = old_alignment(logits, old_logits, old_order, classes)?;
    let new_pos = index.positions(&ctx.new_classes)?;
    let bg = index
        .position(ctx.background)
        .ok_or_else(|| Error::Alignment("background channel missing".into()))?;
    let ko = old_order.len();
    let scale = 1.0 / (n * k) as f64;
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0;
    for (((z, g), zo), &y) in logits
        .data()
        .chunks(k)
        .zip(grad.data_mut().chunks_mut(k))
        .zip(old_logits.data().chunks(ko))
        .zip(mask.labels())
    {
        if index.position(y).is_none() || !ctx.new_classes.contains(&y) {
            return Err(Error::LabelDomain(format!(
                "label {y} is not a class of the current step {:?}",
                ctx.new_classes
            )));
        }
        let mut add = |pos: usize, target: f64, w: f64| {
            if w != 0.0 {
                let (v, d) = bce_with_logit(z[pos], target);
                g[pos] += w * d * scale;
                total += w * v;
            }
        };
        for (&pos, &c) in new_pos.iter().zip(&ctx.new_classes) {
            if c != ctx.background {
                add(pos, f64::from(u8::from(y == c)), 1.0);
            }
        }
        for (j, (&pos, &c)) in old_pos.iter().zip(old_order).enumerate() {
            if c != ctx.background {
                add(pos, sigmoid(zo[j]), weights.distill);
            }
        }
        let bg_old = old_order
            .iter()
            .position(|&c| c == ctx.background)
            .map(|j| sigmoid(zo[j]))
            .ok_or_else(|| Error::Alignment("old model lacks a background channel".into()))?;
        let gt_bg = f64::from(u8::from(y == ctx.background));
        match variant {
            LwfMcVariant::Full => {
                add(bg, gt_bg, weights.cls);
                add(bg, bg_old, weights.kd * weights.distill);
            }
            LwfMcVariant::C => add(bg, gt_bg, weights.cls),
            LwfMcVariant::D => add(bg, bg_old, weights.kd * weights.distill),
        }
    }
    Ok(LossEval {
        value: total * scale,
        grad,
    })
}

/// Pixel-averaged squared L2 distance between feature maps. The gradient is
/// with respect to `features_new`.
pub fn feature_distillation(features_new: &Tensor, features_old: &Tensor) -> Result<LossEval> {
    if features_new.shape() != features_old.shape() || features_new.shape().len() != 3 {
        return Err(Error::Alignment(format!(
            "feature maps {:?} vs {:?}",
            features_new.shape(),
            features_old.shape()
        )));
    }
    let s = features_new.shape();
    let n = (s[0] * s[1]) as f64;
    let mut grad = Tensor::zeros(s);
    let mut total = 0.0;
    for ((g, a), b) in grad
        .data_mut()
        .iter_mut()
        .zip(features_new.data())
        .zip(features_old.data())
    {
        let d = a - b;
        total += d * d;
        *g = 2.0 * d / n;
    }
    Ok(LossEval {
        value: total / n,
        grad,
    })
}

/// Mean per-pixel entropy of a probability volume `[H, W, K]`.
pub fn mean_entropy(probs: &Tensor) -> Result<f64> {
    let k = probs.last_dim()?;
    let rows = probs.len() / k;
    let total: f64 = probs
        .data()
        .chunks(k)
        .map(|row| {
            row.iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| -p * p.ln())
                .sum::<f64>()
        })
        .sum();
    Ok(total / rows as f64)
}

/// `q̃`: current probabilities over `C^t` with the background channel
/// holding the mass of every old class.
pub fn merged_old_mass(probs: &[f64], index: &ClassIndex, ctx: &LossContext) -> Result<Vec<f64>> {
    let old = index.positions(&ctx.old_classes)?;
    ctx.new_classes
        .iter()
        .map(|&c| {
            if c == ctx.background {
                Ok(old.iter().map(|&i| probs[i]).sum())
            } else {
                index.positions(&[c]).map(|p| probs[p[0]])
            }
        })
        .collect()
}

/// `q̂`: current probabilities over `Y^{t-1}` with the background channel
/// holding the mass of the background and every new class.
pub fn merged_new_mass(probs: &[f64], index: &ClassIndex, ctx: &LossContext) -> Result<Vec<f64>> {
    let new = index.positions(&ctx.new_classes)?;
    ctx.old_classes
        .iter()
        .map(|&c| {
            if c == ctx.background {
                Ok(new.iter().map(|&i| probs[i]).sum())
            } else {
                index.positions(&[c]).map(|p| probs[p[0]])
            }
        })
        .collect()
}
