//! Hyperparameter validation using only the current step's data: a train/val
//! split, learning-rate choice with plain fine-tuning, and method-weight choice
//! under a tolerated drop in new-class accuracy.

use serde::{Deserialize, Serialize};

use crate::eval::{miou_groups, ConfusionMatrix};
use crate::exec::{map_ordered, ExecMode};
use crate::losses::MethodConfig;
use crate::model::SegModel;
use crate::rng::{derive_seed, stream};
use crate::scenario::{LabelSchedule, StepDataset};
use crate::trainer::{run_step, StepResult, TrainConfig};
use crate::{Error, Result};

pub const DEFAULT_TRAIN_RATIO: f64 = 0.8;
pub const DEFAULT_TOLERATED_DECAY: f64 = 0.2;

/// Candidate weights, strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HparamGrid {
    candidates: Vec<f64>,
}

impl HparamGrid {
    /// `A·10^B` for `A ∈ {1, 5}`, `B ∈ {-3..3}`: 14 values from 0.001 to 5000.
    pub fn standard() -> Self {
        let candidates = (-3..=3)
            .flat_map(|b| [1, 5].map(|a| format!("{a}e{b}").parse::<f64>().expect("decimal literal")))
            .collect();
        Self { candidates }
    }

    pub fn new(candidates: Vec<f64>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::Config("empty hyperparameter grid".into()));
        }
        if candidates.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::Config("grid values must be finite and non-negative".into()));
        }
        if candidates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("grid values must be strictly increasing".into()));
        }
        Ok(Self { candidates })
    }

    pub fn candidates(&self) -> &[f64] {
        &self.candidates
    }
}

impl Default for HparamGrid {
    fn default() -> Self {
        Self::standard()
    }
}

fn id_key(seed: u64, step: usize, id: &str) -> u64 {
    // FNV-1a keeps the key independent of the sample's position
    let h = id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3));
    derive_seed(seed, &[stream::VAL_SPLIT, step as u64, h])
}

/// Splits a step's data into train and validation parts. The validation
/// part holds `floor(n·(1 − ratio))` samples, at least one. Membership depends
/// only on the seed and the sample ids.
pub fn split_train_val(data: &StepDataset, ratio: f64, seed: u64) -> Result<(StepDataset, StepDataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("train ratio must lie in (0, 1), got {ratio}")));
    }
    let n = data.len();
    // n - ceil(n·ratio) is floor(n·(1 - ratio)) without the rounding error of 1 - ratio
    let n_val = (n - ((n as f64 * ratio) - 1e-9).ceil().max(0.0) as usize).max(1);
    if n_val >= n {
        return Err(Error::Config(format!("cannot split {n} samples into non-empty train and val parts")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (id_key(seed, data.step, &data.ids[i]), data.ids[i].clone()));
    let mut val_idx = order[..n_val].to_vec();
    let mut train_idx = order[n_val..].to_vec();
    val_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok((data.subset(&train_idx)?, data.subset(&val_idx)?))
}

/// Mean IoU over the step's new classes on validation data, whose masks only
/// carry the step's own labels.
pub fn new_class_miou(
    model: &SegModel,
    val: &StepDataset,
    schedule: &LabelSchedule,
    mode: ExecMode,
) -> Result<f64> {
    let t = val.step;
    let seen = schedule.seen_classes(t);
    let parts = map_ordered(mode, &val.samples, |(img, mask)| -> Result<ConfusionMatrix> {
        let mut m = ConfusionMatrix::new(&seen)?;
        m.accumulate(&model.predict(img)?, mask)?;
        Ok(m)
    });
    let mut total = ConfusionMatrix::new(&seen)?;
    for p in parts {
        total.merge(&p?)?;
    }
    miou_groups(&total.iou_per_class(), &seen, schedule, t)?.groups[t]
        .ok_or_else(|| Error::Estimation(format!("no new-class pixels in the step {t} validation data")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub value: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub value: f64,
    /// Set when no candidate met the constraint and the smallest was taken.
    pub fallback: bool,
    pub reference: f64,
    pub threshold: f64,
    pub trace: Vec<Candidate>,
}

/// Scores every grid value and returns the largest whose score is at least
/// `(1 − tolerated_decay)·reference`. Falls back to the smallest value, flagged,
/// when none qualifies.
pub fn select_method_weight<F>(
    grid: &HparamGrid,
    reference: f64,
    tolerated_decay: f64,
    mode: ExecMode,
    score: F,
) -> Result<Selection>
where
    F: Fn(f64) -> Result<f64> + Sync + Send,
{
    if !(0.0..=1.0).contains(&tolerated_decay) {
        return Err(Error::Config(format!("tolerated decay must lie in [0, 1], got {tolerated_decay}")));
    }
    let threshold = (1.0 - tolerated_decay) * reference;
    let scores = map_ordered(mode, grid.candidates(), |&w| score(w));
    let trace = grid
        .candidates()
        .iter()
        .zip(scores)
        .map(|(&value, s)| Ok(Candidate { value, score: s? }))
        .collect::<Result<Vec<_>>>()?;
    let best = trace.iter().rev().find(|c| c.score >= threshold);
    Ok(Selection {
        value: best.map_or(grid.candidates()[0], |c| c.value),
        fallback: best.is_none(),
        reference,
        threshold,
        trace,
    })
}

/// Trains `method` on one step from `prev` and scores it on `val`.
pub fn validation_score(
    prev: &StepResult,
    train: &StepDataset,
    val: &StepDataset,
    schedule: &LabelSchedule,
    method: &MethodConfig,
    cfg: &TrainConfig,
    mode: ExecMode,
) -> Result<f64> {
    let result = run_step(Some(prev), train, schedule, method, cfg, mode)?;
    new_class_miou(&result.model, val, schedule, mode)
}

/// Learning rate for incremental steps: the candidate giving fine-tuning the
/// best new-class validation score, the smallest on ties.
pub fn select_learning_rate(
    prev: &StepResult,
    train: &StepDataset,
    val: &StepDataset,
    schedule: &LabelSchedule,
    candidates: &[f64],
    cfg: &TrainConfig,
    mode: ExecMode,
) -> Result<Selection> {
    let grid = HparamGrid::new(candidates.to_vec())?;
    let ft = MethodConfig::preset("FT")?;
    let trace = grid
        .candidates()
        .iter()
        .map(|&lr| {
            let c = TrainConfig { lr_later: lr, ..cfg.clone() };
            Ok(Candidate {
                value: lr,
                score: validation_score(prev, train, val, schedule, &ft, &c, mode)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = trace
        .iter()
        .fold(&trace[0], |b, c| if c.score > b.score { c } else { b });
    Ok(Selection {
        value: best.value,
        fallback: false,
        reference: best.score,
        threshold: best.score,
        trace,
    })
}

/// Full weight selection at step `data.step`: fine-tuning on the train part
/// sets the reference, then each grid weight of `method` is trained and
/// scored. A method without a weight is scored at the reference everywhere.
#[allow(clippy::too_many_arguments)]
pub fn tune_method_weight(
    prev: &StepResult,
    data: &StepDataset,
    schedule: &LabelSchedule,
    method: &MethodConfig,
    cfg: &TrainConfig,
    grid: &HparamGrid,
    tolerated_decay: f64,
    mode: ExecMode,
) -> Result<Selection> {
    let (train, val) = split_train_val(data, DEFAULT_TRAIN_RATIO, cfg.seed)?;
    let ft = MethodConfig::preset("FT")?;
    let reference = validation_score(prev, &train, &val, schedule, &ft, cfg, mode)?;
    let weighted = method.method_weight().is_some();
    // candidate trainings run one after another; each already uses `mode` inside
    select_method_weight(grid, reference, tolerated_decay, ExecMode::Sequential, |w| {
        if !weighted {
            return Ok(reference);
        }
        validation_score(prev, &train, &val, schedule, &method.with_method_weight(w), cfg, mode)
    })
}
