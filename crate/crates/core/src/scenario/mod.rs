//! Label schedules, incremental splits, relabelling, synthetic data and
//! on-disk datasets.

mod io;
mod synthetic;

pub use io::{load_dataset, write_dataset, MANIFEST};
pub use synthetic::{generate_synthetic, SyntheticConfig};

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::labels::{ClassId, Mask, BACKGROUND};
use crate::losses::LossContext;
use crate::numerics::Tensor;
use crate::rng::{rng_for, stream};
use crate::{Error, Result};

/// How foreground classes are ordered before being sliced into steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClassOrder {
    #[default]
    Index,
    Permuted(u64),
}

/// Foreground classes introduced at each step. Background is implicit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchedule {
    steps: Vec<Vec<ClassId>>,
}

impl LabelSchedule {
    pub fn new(steps: Vec<Vec<ClassId>>) -> Result<Self> {
        if steps.first().is_none_or(|s| s.is_empty()) {
            return Err(Error::ScheduleViolation("the first step must add at least one class".into()));
        }
        let mut seen = BTreeSet::new();
        for &c in steps.iter().flatten() {
            if c == BACKGROUND || !seen.insert(c) {
                return Err(Error::ScheduleViolation(format!("class {c} is background or repeated")));
            }
        }
        Ok(Self { steps })
    }

    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn steps(&self) -> &[Vec<ClassId>] {
        &self.steps
    }

    /// `C^t` without background.
    pub fn new_classes(&self, t: usize) -> &[ClassId] {
        &self.steps[t]
    }

    /// `Y^t`, background first.
    pub fn seen_classes(&self, t: usize) -> Vec<ClassId> {
        let mut v = vec![BACKGROUND];
        v.extend(self.steps[..=t].iter().flatten());
        v
    }

    /// `Y^{t-1}`; only background before the first step.
    pub fn old_classes(&self, t: usize) -> Vec<ClassId> {
        if t == 0 {
            vec![BACKGROUND]
        } else {
            self.seen_classes(t - 1)
        }
    }

    pub fn all_classes(&self) -> Vec<ClassId> {
        self.seen_classes(self.steps.len() - 1)
    }

    /// Loss context of step `t`; `None` for the first step.
    pub fn context(&self, t: usize) -> Result<Option<LossContext>> {
        if t == 0 {
            return Ok(None);
        }
        LossContext::new(&self.old_classes(t), &self.steps[t]).map(Some)
    }

    /// Every class in a single offline step.
    pub fn merged(&self) -> Self {
        Self {
            steps: vec![self.steps.iter().flatten().copied().collect()],
        }
    }
}

/// Slices classes `1..=num_fg_classes` into steps of the given sizes.
pub fn build_schedule(num_fg_classes: usize, sizes: &[usize], order: ClassOrder) -> Result<LabelSchedule> {
    if sizes.iter().sum::<usize>() != num_fg_classes || sizes.contains(&0) {
        return Err(Error::ScheduleViolation(format!(
            "step sizes {sizes:?} do not partition {num_fg_classes} classes"
        )));
    }
    if num_fg_classes > ClassId::MAX as usize {
        return Err(Error::ScheduleViolation("too many classes".into()));
    }
    let mut classes: Vec<ClassId> = (1..=num_fg_classes as ClassId).collect();
    if let ClassOrder::Permuted(seed) = order {
        classes.shuffle(&mut rng_for(seed, &[stream::CLASS_ORDER]));
    }
    let mut steps = Vec::with_capacity(sizes.len());
    let mut rest = classes.as_slice();
    for &s in sizes {
        let (head, tail) = rest.split_at(s);
        steps.push(head.to_vec());
        rest = tail;
    }
    LabelSchedule::new(steps)
}

/// Keeps labels in `visible`; every other pixel becomes `background`.
pub fn relabel(mask: &Mask, visible: &[ClassId], background: ClassId) -> Mask {
    let mut out = mask.clone();
    for l in out.labels_mut() {
        if !visible.contains(l) {
            *l = background;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub image: Tensor,
    pub mask: Mask,
}

/// Background pixels of a step's relabelled masks that really belong to
/// another class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackgroundShift {
    pub old_pixels: usize,
    pub future_pixels: usize,
}

#[derive(Debug, Clone)]
pub struct StepDataset {
    pub step: usize,
    /// `C^t ∪ {b}`.
    pub visible_classes: Vec<ClassId>,
    pub ids: Vec<String>,
    pub samples: Vec<(Tensor, Mask)>,
    pub shift: BackgroundShift,
    sample_shifts: Vec<BackgroundShift>,
}

impl StepDataset {
    fn empty(schedule: &LabelSchedule, t: usize) -> Self {
        let mut visible = vec![BACKGROUND];
        visible.extend(schedule.new_classes(t));
        Self {
            step: t,
            visible_classes: visible,
            ids: Vec::new(),
            samples: Vec::new(),
            shift: BackgroundShift::default(),
            sample_shifts: Vec::new(),
        }
    }

    fn push(&mut self, schedule: &LabelSchedule, s: &Sample) {
        let seen = schedule.seen_classes(self.step);
        let mut shift = BackgroundShift::default();
        for &l in s.mask.labels() {
            if l != BACKGROUND && !self.visible_classes.contains(&l) {
                if seen.contains(&l) {
                    shift.old_pixels += 1;
                } else {
                    shift.future_pixels += 1;
                }
            }
        }
        self.shift.old_pixels += shift.old_pixels;
        self.shift.future_pixels += shift.future_pixels;
        self.sample_shifts.push(shift);
        self.ids.push(s.id.clone());
        self.samples
            .push((s.image.clone(), relabel(&s.mask, &self.visible_classes, BACKGROUND)));
    }

    /// The samples at `indices`, in that order, with the shift recounted.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut out = Self {
            step: self.step,
            visible_classes: self.visible_classes.clone(),
            ids: Vec::with_capacity(indices.len()),
            samples: Vec::with_capacity(indices.len()),
            shift: BackgroundShift::default(),
            sample_shifts: Vec::with_capacity(indices.len()),
        };
        for &i in indices {
            let shift = *self
                .sample_shifts
                .get(i)
                .ok_or_else(|| Error::InvalidInput(format!("sample index {i} out of {}", self.len())))?;
            out.ids.push(self.ids[i].clone());
            out.samples.push(self.samples[i].clone());
            out.shift.old_pixels += shift.old_pixels;
            out.shift.future_pixels += shift.future_pixels;
            out.sample_shifts.push(shift);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub steps: Vec<StepDataset>,
    /// Ids of images that no step could take.
    pub excluded: Vec<String>,
}

/// Protocol for splitting a corpus across steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Disjoint,
    Overlapped,
}

impl std::str::FromStr for SplitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disjoint" => Ok(Self::Disjoint),
            "overlapped" => Ok(Self::Overlapped),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

pub fn split(corpus: &[Sample], schedule: &LabelSchedule, kind: SplitKind) -> Result<Split> {
    match kind {
        SplitKind::Disjoint => split_disjoint(corpus, schedule),
        SplitKind::Overlapped => split_overlapped(corpus, schedule),
    }
}

fn check_labels(s: &Sample, all: &[ClassId]) -> Result<Vec<ClassId>> {
    let present = s.mask.present_classes();
    if let Some(bad) = present.iter().find(|c| !all.contains(c)) {
        return Err(Error::LabelDomain(format!("sample {} has unknown label {bad}", s.id)));
    }
    Ok(present)
}

/// Each image goes to the earliest step whose seen classes cover all its
/// labels and whose new classes it contains.
pub fn split_disjoint(corpus: &[Sample], schedule: &LabelSchedule) -> Result<Split> {
    let all = schedule.all_classes();
    let mut steps: Vec<_> = (0..schedule.num_steps()).map(|t| StepDataset::empty(schedule, t)).collect();
    let mut excluded = Vec::new();
    for s in corpus {
        let present = check_labels(s, &all)?;
        let target = (0..schedule.num_steps()).find(|&t| {
            let seen = schedule.seen_classes(t);
            present.iter().all(|c| seen.contains(c))
                && present.iter().any(|c| schedule.new_classes(t).contains(c))
        });
        match target {
            Some(t) => steps[t].push(schedule, s),
            None => excluded.push(s.id.clone()),
        }
    }
    Ok(Split { steps, excluded })
}

/// Each step takes every image showing one of its new classes.
pub fn split_overlapped(corpus: &[Sample], schedule: &LabelSchedule) -> Result<Split> {
    let all = schedule.all_classes();
    let mut steps: Vec<_> = (0..schedule.num_steps()).map(|t| StepDataset::empty(schedule, t)).collect();
    let mut excluded = Vec::new();
    for s in corpus {
        let present = check_labels(s, &all)?;
        let mut used = false;
        for (t, step) in steps.iter_mut().enumerate() {
            if present.iter().any(|c| schedule.new_classes(t).contains(c)) {
                step.push(schedule, s);
                used = true;
            }
        }
        if !used {
            excluded.push(s.id.clone());
        }
    }
    Ok(Split { steps, excluded })
}

#[cfg(test)]
mod tests;
