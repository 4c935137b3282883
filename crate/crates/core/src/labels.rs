//! Class identifiers, per-pixel label masks, and class → channel lookup.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

pub type ClassId = u16;

/// The shared background / void label.
pub const BACKGROUND: ClassId = 0;

/// Per-pixel class labels in row-major order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    height: usize,
    width: usize,
    labels: Vec<ClassId>,
}

impl Mask {
    pub fn new(height: usize, width: usize, labels: Vec<ClassId>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::InvalidShape(format!(
                "mask {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, label: ClassId) -> Self {
        Self {
            height,
            width,
            labels: vec![label; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [ClassId] {
        &mut self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, y: usize, x: usize) -> ClassId {
        self.labels[y * self.width + x]
    }

    pub fn contains(&self, class: ClassId) -> bool {
        self.labels.contains(&class)
    }

    /// Sorted distinct labels present in the mask.
    pub fn present_classes(&self) -> Vec<ClassId> {
        let mut seen: Vec<ClassId> = self.labels.clone();
        seen.sort_unstable();
        seen.dedup();
        seen
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut labels = Vec::with_capacity(self.labels.len());
        for row in self.labels.chunks(self.width) {
            labels.extend(row.iter().rev());
        }
        Self {
            labels,
            ..self.clone()
        }
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Self {
        let mut labels = Vec::with_capacity(height * width);
        for y in top..top + height {
            labels.extend_from_slice(&self.labels[y * self.width + left..y * self.width + left + width]);
        }
        Self {
            height,
            width,
            labels,
        }
    }
}

/// Maps class ids to their channel position in an ordered class list.
#[derive(Clone, Debug)]
pub struct ClassIndex {
    order: Vec<ClassId>,
    lookup: Vec<Option<usize>>,
}

impl ClassIndex {
    pub fn new(order: &[ClassId]) -> Result<Self> {
        let max = order.iter().copied().max().unwrap_or(0) as usize;
        let mut lookup = vec![None; max + 1];
        for (i, &c) in order.iter().enumerate() {
            if lookup[c as usize].replace(i).is_some() {
                return Err(Error::ScheduleViolation(format!("class {c} listed twice")));
            }
        }
        Ok(Self {
            order: order.to_vec(),
            lookup,
        })
    }

    pub fn position(&self, class: ClassId) -> Option<usize> {
        self.lookup.get(class as usize).copied().flatten()
    }

    pub fn order(&self) -> &[ClassId] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Positions of `classes`, failing with an alignment error on unknown ids.
    pub fn positions(&self, classes: &[ClassId]) -> Result<Vec<usize>> {
        classes
            .iter()
            .map(|&c| {
                self.position(c).ok_or_else(|| {
                    Error::Alignment(format!("class {c} is not among {:?}", self.order))
                })
            })
            .collect()
    }
}
