//! SGD training of one learning step and of a whole schedule.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::eval::{evaluate, GroupReport};
use crate::exec::ExecMode;
use crate::labels::Mask;
use crate::losses::{composite_objective, MethodConfig};
use crate::model::{BackboneConfig, SegModel};
use crate::numerics::Tensor;
use crate::regularizers::{
    finish_path, fisher_diagonal, path_integral_update, rw_importance, ImportanceState, PriorKind, PATH_DAMPING,
};
use crate::rng::{rng_for, stream, Rng};
use crate::scenario::{split, BackgroundShift, LabelSchedule, Sample, SplitKind, StepDataset};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_step0: f64,
    pub lr_later: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs_per_step: usize,
    pub batch_size: usize,
    pub poly_power: f64,
    pub seed: u64,
    /// Random horizontal flips.
    pub hflip: bool,
    /// Side of random square crops; no cropping when absent.
    pub crop: Option<usize>,
    /// Images used for the Fisher estimate; 0 means all.
    pub fisher_samples: usize,
    pub backbone: BackboneConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_step0: 1e-2,
            lr_later: 1e-3,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs_per_step: 20,
            batch_size: 8,
            poly_power: 0.9,
            seed: 0,
            hflip: true,
            crop: None,
            fisher_samples: 0,
            backbone: BackboneConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr_step0 > 0.0 && self.lr_later > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 || self.poly_power < 0.0 {
            return bad("momentum must be in [0, 1) and decay, power non-negative");
        }
        if self.epochs_per_step == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be at least 1");
        }
        if self.crop == Some(0) {
            return bad("crop size must be positive");
        }
        self.backbone.validate()
    }

    fn base_lr(&self, t: usize) -> f64 {
        if t == 0 {
            self.lr_step0
        } else {
            self.lr_later
        }
    }
}

/// `base_lr · (1 − iter/total_iters)^power`.
pub fn poly_lr(iter: usize, total_iters: usize, base_lr: f64, power: f64) -> Result<f64> {
    if total_iters == 0 {
        return Err(Error::Config("poly schedule needs at least one iteration".into()));
    }
    if iter > total_iters {
        return Err(Error::Config(format!("iteration {iter} beyond {total_iters}")));
    }
    Ok(base_lr * (1.0 - iter as f64 / total_iters as f64).powf(power))
}

/// Position in training, attached to divergence errors.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrainPos {
    pub step: usize,
    pub iteration: usize,
}

/// `v ← m·v + g + wd·θ; θ ← θ − lr·v`, in place.
pub fn sgd_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    velocity: &mut [Tensor],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    pos: TrainPos,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::Alignment("parameter, gradient and velocity counts differ".into()));
    }
    for (i, g) in grads.iter().enumerate() {
        params[i].check_same_shape(g)?;
        velocity[i].check_same_shape(g)?;
        if !g.is_finite() {
            return Err(Error::Divergence {
                step: pos.step,
                iteration: pos.iteration,
                message: format!("non-finite gradient for parameter {i}"),
            });
        }
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        for ((th, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = momentum * *vv + gv + weight_decay * *th;
            *th -= lr * *vv;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub step: usize,
    pub model: SegModel,
    /// Mean objective of each epoch.
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
    /// Path-integral importance of this step's trajectory.
    pub path: ImportanceState,
    /// Importance to carry into the next step, for prior-based methods.
    pub prior: Option<ImportanceState>,
}

fn augment(image: &Tensor, mask: &Mask, cfg: &TrainConfig, rng: &mut Rng) -> Result<(Tensor, Mask)> {
    let (h, w, c) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let (mut img, mut m) = (image.clone(), mask.clone());
    if cfg.hflip && rng.gen_bool(0.5) {
        let mut data = Vec::with_capacity(img.len());
        for row in img.data().chunks(w * c) {
            for px in row.chunks(c).rev() {
                data.extend_from_slice(px);
            }
        }
        img = Tensor::new(vec![h, w, c], data)?;
        m = m.flip_horizontal();
    }
    if let Some(side) = cfg.crop {
        if side < h || side < w {
            let (ch, cw) = (side.min(h), side.min(w));
            let top = rng.gen_range(0..=h - ch);
            let left = rng.gen_range(0..=w - cw);
            let mut data = Vec::with_capacity(ch * cw * c);
            for y in top..top + ch {
                data.extend_from_slice(&img.data()[(y * w + left) * c..(y * w + left + cw) * c]);
            }
            img = Tensor::new(vec![ch, cw, c], data)?;
            m = m.crop(top, left, ch, cw);
        }
    }
    Ok((img, m))
}

/// Model the first step starts from.
pub fn initial_model(schedule: &LabelSchedule, cfg: &TrainConfig) -> Result<SegModel> {
    SegModel::new(cfg.backbone, schedule.new_classes(0), &mut rng_for(cfg.seed, &[stream::MODEL_INIT]))
}

/// Trains step `data.step`. `prev` holds the previous step's result and is
/// only read.
pub fn run_step(
    prev: Option<&StepResult>,
    data: &StepDataset,
    schedule: &LabelSchedule,
    method: &MethodConfig,
    cfg: &TrainConfig,
    mode: ExecMode,
) -> Result<StepResult> {
    cfg.validate()?;
    method.validate()?;
    let t = data.step;
    if data.is_empty() {
        return Err(Error::Config(format!("step {t} has no training images")));
    }
    let step_rng = |tag: u64| rng_for(cfg.seed, &[stream::STEP, t as u64, tag]);
    let (mut model, old) = match (t, prev) {
        (0, _) => (initial_model(schedule, cfg)?, None),
        (_, Some(p)) => (
            p.model.extend_classifier(schedule.new_classes(t), method.init, &mut step_rng(stream::HEAD_INIT))?,
            Some(&p.model),
        ),
        (_, None) => {
            return Err(Error::ScheduleViolation(format!("step {t} needs the previous step's model")))
        }
    };
    let ctx = schedule.context(t)?;
    let prior_in = prev.and_then(|p| p.prior.as_ref());
    let mut path = ImportanceState::start_path(&model);

    let n = data.len();
    let per_epoch = n.div_ceil(cfg.batch_size);
    let total = per_epoch * cfg.epochs_per_step;
    let mut velocity: Vec<Tensor> = model.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut batch_rng = step_rng(stream::BATCHES);
    let mut loss_trace = Vec::with_capacity(cfg.epochs_per_step);
    let mut iter = 0;
    for _ in 0..cfg.epochs_per_step {
        order.shuffle(&mut batch_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| augment(&data.samples[i].0, &data.samples[i].1, cfg, &mut batch_rng))
                .collect::<Result<Vec<_>>>()?;
            let obj = composite_objective(method, ctx.as_ref(), &batch, &model, old, prior_in, mode)?;
            let pos = TrainPos { step: t, iteration: iter };
            if !obj.value.is_finite() {
                return Err(Error::Divergence {
                    step: t,
                    iteration: iter,
                    message: "non-finite objective".into(),
                });
            }
            let lr = poly_lr(iter, total, cfg.base_lr(t), cfg.poly_power)?;
            let before: Vec<Tensor> = model.params().into_iter().cloned().collect();
            sgd_step(&mut model.params_mut(), &obj.grads, &mut velocity, lr, cfg.momentum, cfg.weight_decay, pos)?;
            let delta: Vec<Tensor> = model
                .params()
                .iter()
                .zip(&before)
                .map(|(a, b)| {
                    let mut d = (*a).clone();
                    d.axpy(-1.0, b)?;
                    Ok(d)
                })
                .collect::<Result<_>>()?;
            path_integral_update(&mut path, &obj.grads, &delta)?;
            epoch_loss += obj.value * chunk.len() as f64;
            iter += 1;
        }
        loss_trace.push(epoch_loss / n as f64);
    }
    if !model.is_finite() {
        return Err(Error::Divergence {
            step: t,
            iteration: iter,
            message: "non-finite parameters after training".into(),
        });
    }

    let end: Vec<Tensor> = model.params().into_iter().cloned().collect();
    finish_path(&mut path, &end, PATH_DAMPING)?;
    let mut result = StepResult {
        step: t,
        model,
        loss_trace,
        iterations: iter,
        path,
        prior: None,
    };
    result.prior = prior_for(method, &result, data, cfg, mode)?;
    Ok(result)
}

/// Importance `method` carries out of a finished step.
pub fn prior_for(
    method: &MethodConfig,
    result: &StepResult,
    data: &StepDataset,
    cfg: &TrainConfig,
    mode: ExecMode,
) -> Result<Option<ImportanceState>> {
    let fisher = || fisher_diagonal(&result.model, &data.samples, cfg.fisher_samples, mode);
    Ok(match method.prior {
        None => None,
        Some(PriorKind::Ewc) => Some(fisher()?),
        Some(PriorKind::Pi) => Some(result.path.clone()),
        Some(PriorKind::Rw) => Some(rw_importance(&fisher()?, &result.path)?),
    })
}

/// Outcome of training over a whole schedule.
#[derive(Debug, Clone)]
pub struct IncrementalRun {
    pub steps: Vec<StepResult>,
    /// Evaluation after each step.
    pub evals: Vec<GroupReport>,
    pub excluded: Vec<String>,
    pub shifts: Vec<BackgroundShift>,
}

/// Splits `train`, trains every step in order and evaluates on `eval_set`
/// after each one. `first` replaces the training of step 0 when given; its
/// prior is recomputed for `method`.
#[allow(clippy::too_many_arguments)]
pub fn run_incremental(
    train: &[Sample],
    eval_set: &[Sample],
    schedule: &LabelSchedule,
    kind: SplitKind,
    method: &MethodConfig,
    cfg: &TrainConfig,
    mode: ExecMode,
    first: Option<StepResult>,
) -> Result<IncrementalRun> {
    let parts = split(train, schedule, kind)?;
    let mut steps: Vec<StepResult> = Vec::with_capacity(schedule.num_steps());
    let mut evals = Vec::with_capacity(schedule.num_steps());
    let mut first = first;
    for data in &parts.steps {
        let result = match (data.step, first.take()) {
            (0, Some(mut r)) => {
                r.prior = prior_for(method, &r, data, cfg, mode)?;
                r
            }
            _ => run_step(steps.last(), data, schedule, method, cfg, mode)?,
        };
        evals.push(evaluate(&result.model, eval_set, schedule, data.step, mode)?);
        steps.push(result);
    }
    Ok(IncrementalRun {
        steps,
        evals,
        excluded: parts.excluded,
        shifts: parts.steps.iter().map(|s| s.shift).collect(),
    })
}
