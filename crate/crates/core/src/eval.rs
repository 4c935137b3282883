//! Confusion matrices, per-class IoU and step-grouped mIoU.

use serde::{Deserialize, Serialize};

use crate::exec::{map_ordered, ExecMode};
use crate::labels::{ClassId, ClassIndex, Mask, BACKGROUND};
use crate::model::SegModel;
use crate::scenario::{relabel, LabelSchedule, Sample};
use crate::{Error, Result};

/// Pixel counts indexed `[ground truth][prediction]` over an ordered class
/// list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: Vec<ClassId>,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: &[ClassId]) -> Result<Self> {
        ClassIndex::new(classes)?;
        let k = classes.len();
        Ok(Self {
            classes: classes.to_vec(),
            counts: vec![0; k * k],
        })
    }

    pub fn classes(&self) -> &[ClassId] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    fn position(&self, c: ClassId) -> Result<usize> {
        self.classes
            .iter()
            .position(|&x| x == c)
            .ok_or_else(|| Error::LabelDomain(format!("label {c} is not among {:?}", self.classes)))
    }

    pub fn count(&self, gt: ClassId, pred: ClassId) -> Result<u64> {
        let k = self.num_classes();
        Ok(self.counts[self.position(gt)? * k + self.position(pred)?])
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accumulate(&mut self, pred: &Mask, gt: &Mask) -> Result<()> {
        if pred.height() != gt.height() || pred.width() != gt.width() {
            return Err(Error::Alignment(format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        let k = self.num_classes();
        let mut lut = vec![usize::MAX; self.classes.iter().copied().max().map_or(0, |m| m as usize + 1)];
        for (i, &c) in self.classes.iter().enumerate() {
            lut[c as usize] = i;
        }
        let pos = |c: ClassId| {
            lut.get(c as usize)
                .copied()
                .filter(|&p| p != usize::MAX)
                .ok_or_else(|| Error::LabelDomain(format!("label {c} is not among {:?}", self.classes)))
        };
        let mut local = vec![0u64; k * k];
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            local[pos(g)? * k + pos(p)?] += 1;
        }
        for (a, b) in self.counts.iter_mut().zip(local) {
            *a += b;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.classes != other.classes {
            return Err(Error::Alignment("confusion matrices over different classes".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// IoU per class in matrix order; `None` when the class is neither
    /// present nor predicted.
    pub fn iou_per_class(&self) -> Vec<Option<f64>> {
        let k = self.num_classes();
        (0..k)
            .map(|c| {
                let tp = self.counts[c * k + c];
                let row: u64 = self.counts[c * k..(c + 1) * k].iter().sum();
                let col: u64 = (0..k).map(|r| self.counts[r * k + c]).sum();
                let denom = row + col - tp;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Mean IoU per learning-step group, plus the means over all classes with
/// and without background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    /// Group `g` holds the classes added at step `g`; background is in group 0.
    pub groups: Vec<Option<f64>>,
    pub all: Option<f64>,
    pub all_fg: Option<f64>,
    pub per_class: Vec<(ClassId, Option<f64>)>,
}

/// Groups `iou` (ordered as `classes`) by the steps `0..=t` of `schedule`.
pub fn miou_groups(iou: &[Option<f64>], classes: &[ClassId], schedule: &LabelSchedule, t: usize) -> Result<GroupReport> {
    if iou.len() != classes.len() {
        return Err(Error::Alignment(format!("{} IoUs for {} classes", iou.len(), classes.len())));
    }
    if t >= schedule.num_steps() {
        return Err(Error::ScheduleViolation(format!("step {t} outside the schedule")));
    }
    let lookup = |c: ClassId| classes.iter().position(|&x| x == c).map(|i| iou[i]);
    let mut groups = Vec::with_capacity(t + 1);
    for s in 0..=t {
        let mut members: Vec<ClassId> = schedule.new_classes(s).to_vec();
        if s == 0 {
            members.insert(0, BACKGROUND);
        }
        let vals = members
            .iter()
            .map(|&c| lookup(c).ok_or_else(|| Error::Alignment(format!("class {c} has no IoU"))))
            .collect::<Result<Vec<_>>>()?;
        groups.push(mean_defined(vals.into_iter()));
    }
    let seen = schedule.seen_classes(t);
    let vals: Vec<(ClassId, Option<f64>)> = seen.iter().map(|&c| (c, lookup(c).flatten())).collect();
    Ok(GroupReport {
        groups,
        all: mean_defined(vals.iter().map(|v| v.1)),
        all_fg: mean_defined(vals.iter().filter(|v| v.0 != BACKGROUND).map(|v| v.1)),
        per_class: vals,
    })
}

/// Scores `model` after step `t` on full-annotation samples. Labels of
/// classes not yet seen count as background.
pub fn evaluate(model: &SegModel, samples: &[Sample], schedule: &LabelSchedule, t: usize, mode: ExecMode) -> Result<GroupReport> {
    let seen = schedule.seen_classes(t);
    let mut total = ConfusionMatrix::new(&seen)?;
    let parts = map_ordered(mode, samples, |s| -> Result<ConfusionMatrix> {
        let mut m = ConfusionMatrix::new(&seen)?;
        m.accumulate(&model.predict(&s.image)?, &relabel(&s.mask, &seen, BACKGROUND))?;
        Ok(m)
    });
    for p in parts {
        total.merge(&p?)?;
    }
    miou_groups(&total.iou_per_class(), &seen, schedule, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use crate::scenario::{build_schedule, ClassOrder};
    use rand::Rng as _;

    #[test]
    fn diagonal_counts() {
        let mut m = ConfusionMatrix::new(&[0, 1, 2, 3]).unwrap();
        let mask = Mask::filled(2, 5, 3);
        m.accumulate(&mask, &mask).unwrap();
        assert_eq!(m.count(3, 3).unwrap(), 10);
        m.accumulate(&Mask::new(0, 0, vec![]).unwrap(), &Mask::new(0, 0, vec![]).unwrap()).unwrap();
        assert_eq!(m.total(), 10);
        assert!(matches!(m.accumulate(&Mask::filled(1, 1, 4), &mask.crop(0, 0, 1, 1)), Err(Error::LabelDomain(_))));
    }

    #[test]
    fn counts_match_pair_scan() {
        let mut rng = rng_for(1, &[]);
        let classes = [0, 2, 5, 7];
        let gen = |rng: &mut crate::rng::Rng| {
            Mask::new(4, 4, (0..16).map(|_| classes[rng.gen_range(0..4)]).collect()).unwrap()
        };
        let mut m = ConfusionMatrix::new(&classes).unwrap();
        let mut pairs = Vec::new();
        for _ in 0..5 {
            let (p, g) = (gen(&mut rng), gen(&mut rng));
            m.accumulate(&p, &g).unwrap();
            pairs.extend(g.labels().iter().copied().zip(p.labels().iter().copied()));
        }
        for &a in &classes {
            for &b in &classes {
                let brute = pairs.iter().filter(|&&(g, p)| g == a && p == b).count() as u64;
                assert_eq!(m.count(a, b).unwrap(), brute);
            }
        }
        let mut doubled = m.clone();
        doubled.merge(&m).unwrap();
        assert_eq!(doubled.total(), 2 * m.total());
    }

    #[test]
    fn iou_hand_values() {
        let mut m = ConfusionMatrix::new(&[0, 1, 2]).unwrap();
        let gt = Mask::new(1, 10, vec![1; 10]).unwrap();
        let pred = Mask::new(1, 10, vec![1, 1, 1, 1, 1, 2, 2, 2, 2, 2]).unwrap();
        m.accumulate(&pred, &gt).unwrap();
        let iou = m.iou_per_class();
        assert_eq!(iou[0], None);
        assert_eq!(iou[1], Some(0.5));
        assert_eq!(iou[2], Some(0.0));

        let mut perfect = ConfusionMatrix::new(&[0, 1]).unwrap();
        let g = Mask::new(1, 4, vec![0, 1, 1, 0]).unwrap();
        perfect.accumulate(&g, &g).unwrap();
        assert_eq!(perfect.iou_per_class(), vec![Some(1.0), Some(1.0)]);
    }

    #[test]
    fn grouped_means() {
        let s = build_schedule(20, &[19, 1], ClassOrder::Index).unwrap();
        let classes = s.all_classes();
        let mut iou: Vec<Option<f64>> = (0..=19).map(|c| Some(0.01 * c as f64)).collect();
        iou.push(Some(0.9));
        let r = miou_groups(&iou, &classes, &s, 1).unwrap();
        let g0: f64 = (0..=19).map(|c| 0.01 * c as f64).sum::<f64>() / 20.0;
        assert!((r.groups[0].unwrap() - g0).abs() < 1e-12);
        assert_eq!(r.groups[1], Some(0.9));
        let all = (g0 * 20.0 + 0.9) / 21.0;
        assert!((r.all.unwrap() - all).abs() < 1e-12);
        let fg = ((1..=19).map(|c| 0.01 * c as f64).sum::<f64>() + 0.9) / 20.0;
        assert!((r.all_fg.unwrap() - fg).abs() < 1e-12);
        assert!(r.all.unwrap() >= r.groups[0].unwrap() && r.all.unwrap() <= r.groups[1].unwrap());

        let flat = vec![Some(0.5); 21];
        let r = miou_groups(&flat, &classes, &s, 1).unwrap();
        assert_eq!(r.groups, vec![Some(0.5), Some(0.5)]);

        let one = build_schedule(3, &[3], ClassOrder::Index).unwrap();
        let r = miou_groups(&[Some(0.2), Some(0.4), None, Some(0.9)], &one.all_classes(), &one, 0).unwrap();
        assert_eq!(r.groups[0], r.all);
    }
}
