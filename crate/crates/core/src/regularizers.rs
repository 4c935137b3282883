//! Parameter-importance priors and their quadratic penalty.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::exec::{map_ordered, ExecMode};
use crate::labels::Mask;
use crate::losses::cross_entropy;
use crate::model::{SegModel, TensorArchive};
use crate::numerics::{Tape, Tensor};
use crate::{Error, Result};

/// Damping added to the squared displacement in the path-integral score.
pub const PATH_DAMPING: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PriorKind {
    #[serde(rename = "EWC")]
    Ewc,
    #[serde(rename = "PI")]
    Pi,
    #[serde(rename = "RW")]
    Rw,
}

impl PriorKind {
    fn tag(self) -> &'static str {
        match self {
            Self::Ewc => "EWC",
            Self::Pi => "PI",
            Self::Rw => "RW",
        }
    }

    fn from_tag(s: &str) -> Result<Self> {
        match s {
            "EWC" => Ok(Self::Ewc),
            "PI" => Ok(Self::Pi),
            "RW" => Ok(Self::Rw),
            other => Err(Error::Checkpoint(format!("unknown prior kind {other:?}"))),
        }
    }
}

/// Per-parameter importance and the anchor it is measured from, keyed by
/// parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceState {
    pub kind: PriorKind,
    pub names: Vec<String>,
    pub importance: Vec<Tensor>,
    pub anchor: Vec<Tensor>,
    /// Running `Σ −g·Δθ` (path integral only).
    pub path_sums: Vec<Tensor>,
    /// Parameters at the start of the tracked step (path integral only).
    pub start: Vec<Tensor>,
    pub samples: usize,
}

/// Quadratic penalty value and its gradient per model parameter.
#[derive(Debug, Clone)]
pub struct Penalty {
    pub value: f64,
    pub grads: Vec<Tensor>,
}

fn snapshot(model: &SegModel) -> (Vec<String>, Vec<Tensor>) {
    (
        model.param_names(),
        model.params().into_iter().cloned().collect(),
    )
}

impl ImportanceState {
    fn zeros_like(kind: PriorKind, names: Vec<String>, anchor: Vec<Tensor>) -> Self {
        let zeros: Vec<Tensor> = anchor.iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            kind,
            names,
            importance: zeros.clone(),
            path_sums: zeros,
            start: anchor.clone(),
            anchor,
            samples: 0,
        }
    }

    /// Starts path tracking from the model's current parameters.
    pub fn start_path(model: &SegModel) -> Self {
        let (names, params) = snapshot(model);
        Self::zeros_like(PriorKind::Pi, names, params)
    }

    /// Diagonal importance as the mean of squared per-sample gradients.
    pub fn from_sample_gradients(names: Vec<String>, anchor: Vec<Tensor>, per_sample: &[Vec<Tensor>]) -> Result<Self> {
        if per_sample.is_empty() {
            return Err(Error::Estimation("no samples to estimate importance from".into()));
        }
        let mut state = Self::zeros_like(PriorKind::Ewc, names, anchor);
        let inv = 1.0 / per_sample.len() as f64;
        for grads in per_sample {
            if grads.len() != state.importance.len() {
                return Err(Error::Alignment("gradient set does not match parameters".into()));
            }
            for (acc, g) in state.importance.iter_mut().zip(grads) {
                acc.check_same_shape(g)?;
                for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += inv * v * v;
                }
            }
        }
        state.samples = per_sample.len();
        Ok(state)
    }

    fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn max_importance(&self) -> f64 {
        self.importance
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .fold(0.0, f64::max)
    }

    pub fn to_archive(&self) -> TensorArchive {
        let mut ar = TensorArchive::new("importance");
        ar.set_meta("prior", self.kind.tag().to_string());
        ar.set_meta("samples", self.samples.to_string());
        ar.set_meta("names", self.names.join(","));
        for (n, t) in self.names.iter().zip(&self.importance) {
            ar.push_tensor(format!("importance.{n}"), t.clone());
        }
        for (n, t) in self.names.iter().zip(&self.anchor) {
            ar.push_tensor(format!("anchor.{n}"), t.clone());
        }
        ar
    }

    pub fn from_archive(ar: &TensorArchive) -> Result<Self> {
        ar.expect_kind("importance")?;
        let kind = PriorKind::from_tag(ar.meta("prior")?)?;
        let samples = ar
            .meta("samples")?
            .parse()
            .map_err(|_| Error::Checkpoint("bad sample count".into()))?;
        let names: Vec<String> = ar.meta("names")?.split(',').map(str::to_string).collect();
        let get = |prefix: &str| {
            names
                .iter()
                .map(|n| ar.tensor(&format!("{prefix}.{n}")).cloned())
                .collect::<Result<Vec<_>>>()
        };
        let importance = get("importance")?;
        let anchor = get("anchor")?;
        let mut state = Self::zeros_like(kind, names, anchor);
        state.importance = importance;
        state.samples = samples;
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive().write_file(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&TensorArchive::read_file(path)?)
    }
}

/// Gradient of the per-image cross-entropy on `mask` for every parameter.
fn ce_gradients(model: &SegModel, image: &Tensor, mask: &Mask) -> Result<Vec<Tensor>> {
    let mut tape = Tape::new();
    let fwd = model.forward_on_tape(&mut tape, image, true)?;
    let ce = cross_entropy(tape.value(fwd.logits), mask, model.known_classes())?;
    let root = tape.scalar_fn(&[fwd.logits], ce.value, vec![ce.grad])?;
    let mut grads = tape.backward(root)?;
    Ok(fwd
        .params
        .iter()
        .zip(model.params())
        .map(|(&v, p)| grads.take_or_zeros(v, p.shape()))
        .collect())
}

/// Empirical Fisher diagonal from the first `n_samples` images (all when 0),
/// one squared cross-entropy gradient per image on its ground truth.
pub fn fisher_diagonal(model: &SegModel, data: &[(Tensor, Mask)], n_samples: usize, mode: ExecMode) -> Result<ImportanceState> {
    let take = if n_samples == 0 { data.len() } else { n_samples.min(data.len()) };
    if take == 0 {
        return Err(Error::Estimation("cannot estimate importance on an empty dataset".into()));
    }
    let per_sample = map_ordered(mode, &data[..take], |(img, mask)| ce_gradients(model, img, mask))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let (names, anchor) = snapshot(model);
    ImportanceState::from_sample_gradients(names, anchor, &per_sample)
}

/// Adds `−g·Δθ` of one optimiser step to the path sums.
pub fn path_integral_update(state: &mut ImportanceState, grad_before_step: &[Tensor], param_delta: &[Tensor]) -> Result<()> {
    if grad_before_step.len() != state.path_sums.len() || param_delta.len() != state.path_sums.len() {
        return Err(Error::Alignment("path update does not match tracked parameters".into()));
    }
    for ((w, g), d) in state.path_sums.iter_mut().zip(grad_before_step).zip(param_delta) {
        w.check_same_shape(g)?;
        w.check_same_shape(d)?;
        for ((w, g), d) in w.data_mut().iter_mut().zip(g.data()).zip(d.data()) {
            *w -= g * d;
        }
    }
    Ok(())
}

/// Closes path tracking at the model's current parameters:
/// `importance = max(0, w) / ((θ_end − θ_start)² + xi)`.
pub fn finish_path(state: &mut ImportanceState, end: &[Tensor], xi: f64) -> Result<()> {
    if end.len() != state.start.len() {
        return Err(Error::Alignment("end parameters do not match tracked parameters".into()));
    }
    for (((imp, w), s), e) in state.importance.iter_mut().zip(&state.path_sums).zip(&state.start).zip(end) {
        e.check_same_shape(s)?;
        for (((i, w), s), e) in imp.data_mut().iter_mut().zip(w.data()).zip(s.data()).zip(e.data()) {
            *i = w.max(0.0) / ((e - s).powi(2) + xi);
        }
    }
    state.anchor = end.to_vec();
    Ok(())
}

fn normalized(state: &ImportanceState) -> Vec<Tensor> {
    let m = state.max_importance();
    state
        .importance
        .iter()
        .map(|t| if m > 0.0 { t.map(|v| v / m) } else { t.clone() })
        .collect()
}

/// Sum of the two scores, each divided by its own maximum.
pub fn rw_importance(fisher: &ImportanceState, path: &ImportanceState) -> Result<ImportanceState> {
    if fisher.names != path.names {
        return Err(Error::Alignment("importance states cover different parameters".into()));
    }
    let mut out = fisher.clone();
    out.kind = PriorKind::Rw;
    for ((o, f), p) in out.importance.iter_mut().zip(normalized(fisher)).zip(normalized(path)) {
        f.check_same_shape(&p)?;
        *o = f;
        o.axpy(1.0, &p)?;
    }
    Ok(out)
}

/// `weight · Σ importance·(θ − anchor)²` over parameters present in `state`.
pub fn quadratic_penalty(model: &SegModel, state: &ImportanceState, weight: f64) -> Result<Penalty> {
    let mut value = 0.0;
    let mut grads = Vec::new();
    for (name, p) in model.named_params() {
        let mut g = Tensor::zeros(p.shape());
        if let Some(i) = state.position(&name) {
            let (imp, anchor) = (&state.importance[i], &state.anchor[i]);
            if imp.shape() != p.shape() || anchor.shape() != p.shape() {
                return Err(Error::Alignment(format!("anchor for {name} has the wrong shape")));
            }
            for (((g, &th), &a), &w) in g.data_mut().iter_mut().zip(p.data()).zip(anchor.data()).zip(imp.data()) {
                let d = th - a;
                value += weight * w * d * d;
                *g = 2.0 * weight * w * d;
            }
        }
        grads.push(g);
    }
    Ok(Penalty { value, grads })
}
