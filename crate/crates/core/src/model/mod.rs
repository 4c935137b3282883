//! The segmentation predictor: a small convolutional backbone producing
//! per-pixel features, followed by one linear head per known class.

mod archive;

pub use archive::TensorArchive;

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::labels::{ClassId, Mask, BACKGROUND};
use crate::numerics::{Tape, Tensor, Var};
use crate::rng::Rng;
use crate::{Error, Result};

/// Standard deviation of randomly initialised classifier weights.
pub const HEAD_INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub hidden: usize,
    /// Per-pixel feature dimension `D` seen by the heads.
    pub features: usize,
    /// Spatial size of the first convolution (odd).
    pub kernel: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            hidden: 8,
            features: 8,
            kernel: 3,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.hidden == 0 || self.features == 0 {
            return Err(Error::Config("backbone widths must be positive".into()));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "backbone kernel must be odd, got {}",
                self.kernel
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.kernel * self.kernel * self.in_channels * self.hidden
            + self.hidden
            + self.hidden * self.features
            + self.features
    }
}

/// Two convolutions with ReLU: `k×k` then `1×1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    conv1_weight: Tensor,
    conv1_bias: Tensor,
    conv2_weight: Tensor,
    conv2_bias: Tensor,
}

const BACKBONE_NAMES: [&str; 4] = [
    "backbone.conv1.weight",
    "backbone.conv1.bias",
    "backbone.conv2.weight",
    "backbone.conv2.bias",
];

impl Backbone {
    fn init(cfg: &BackboneConfig, rng: &mut Rng) -> Self {
        let fan1 = (cfg.kernel * cfg.kernel * cfg.in_channels) as f64;
        let fan2 = cfg.hidden as f64;
        let he = |fan: f64| Normal::new(0.0, (2.0 / fan).sqrt()).expect("positive std");
        let mut draw = |shape: &[usize], fan: f64| {
            let d = he(fan);
            let n = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..n).map(|_| d.sample(rng)).collect())
                .expect("shape matches")
        };
        Self {
            conv1_weight: draw(&[cfg.kernel, cfg.kernel, cfg.in_channels, cfg.hidden], fan1),
            conv1_bias: Tensor::zeros(&[cfg.hidden]),
            conv2_weight: draw(&[1, 1, cfg.hidden, cfg.features], fan2),
            conv2_bias: Tensor::zeros(&[cfg.features]),
        }
    }

    fn tensors(&self) -> [&Tensor; 4] {
        [
            &self.conv1_weight,
            &self.conv1_bias,
            &self.conv2_weight,
            &self.conv2_bias,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [
            &mut self.conv1_weight,
            &mut self.conv1_bias,
            &mut self.conv2_weight,
            &mut self.conv2_bias,
        ]
    }
}

/// Linear classifier for one class: weights `ω_c ∈ R^D` and bias `β_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub weight: Tensor,
    /// Rank-0 tensor so heads stack into a `[K]` bias vector.
    pub bias: Tensor,
}

impl Head {
    pub fn new(weight: Vec<f64>, bias: f64) -> Self {
        let d = weight.len();
        Self {
            weight: Tensor::new(vec![d], weight).expect("1-d"),
            bias: Tensor::scalar(bias),
        }
    }

    pub fn bias_value(&self) -> f64 {
        self.bias.item()
    }

    fn random(dim: usize, rng: &mut Rng) -> Self {
        let d = Normal::new(0.0, HEAD_INIT_STD).expect("positive std");
        Self::new((0..dim).map(|_| d.sample(rng)).collect(), 0.0)
    }
}

/// How heads for newly introduced classes are initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInit {
    /// Copy the background head and split its probability mass uniformly
    /// among the new classes and the background.
    Background,
    /// Weights from `N(0, HEAD_INIT_STD²)`, zero bias; background untouched.
    Random,
}

/// Per-pixel class probabilities with the channel order they refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVolume {
    pub values: Tensor,
    pub class_order: Vec<ClassId>,
}

/// Output of a plain (gradient-free) forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub features: Tensor,
    pub logits: Tensor,
    pub probs: ProbVolume,
}

/// Tape handles produced by [`SegModel::forward_on_tape`].
#[derive(Debug, Clone)]
pub struct TapeForward {
    /// One var per parameter, in [`SegModel::param_names`] order.
    pub params: Vec<Var>,
    pub features: Var,
    pub logits: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegModel {
    config: BackboneConfig,
    backbone: Backbone,
    heads: BTreeMap<ClassId, Head>,
    known_classes: Vec<ClassId>,
    step: usize,
}

impl SegModel {
    /// Fresh step-0 model knowing the background plus `classes`.
    pub fn new(config: BackboneConfig, classes: &[ClassId], rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut known = vec![BACKGROUND];
        for &c in classes {
            if known.contains(&c) {
                return Err(Error::ScheduleViolation(format!(
                    "class {c} repeated or equal to background"
                )));
            }
            known.push(c);
        }
        let backbone = Backbone::init(&config, rng);
        let heads = known
            .iter()
            .map(|&c| (c, Head::random(config.features, rng)))
            .collect();
        Ok(Self {
            config,
            backbone,
            heads,
            known_classes: known,
            step: 0,
        })
    }

    /// Builds a model from explicit parts; heads must cover `known_classes`.
    pub fn from_parts(
        config: BackboneConfig,
        backbone_tensors: Vec<Tensor>,
        heads: BTreeMap<ClassId, Head>,
        known_classes: Vec<ClassId>,
        step: usize,
    ) -> Result<Self> {
        config.validate()?;
        let shapes = [
            vec![config.kernel, config.kernel, config.in_channels, config.hidden],
            vec![config.hidden],
            vec![1, 1, config.hidden, config.features],
            vec![config.features],
        ];
        if backbone_tensors.len() != 4
            || backbone_tensors.iter().zip(&shapes).any(|(t, s)| t.shape() != s.as_slice())
        {
            return Err(Error::InvalidShape("backbone tensors do not match config".into()));
        }
        let mut it = backbone_tensors.into_iter();
        let mut next = || it.next().expect("four tensors");
        let backbone = Backbone {
            conv1_weight: next(),
            conv1_bias: next(),
            conv2_weight: next(),
            conv2_bias: next(),
        };
        if known_classes.first() != Some(&BACKGROUND) {
            return Err(Error::ScheduleViolation("background must be the first known class".into()));
        }
        let mut sorted = known_classes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != known_classes.len() || !sorted.iter().eq(heads.keys()) {
            return Err(Error::ScheduleViolation(
                "heads must match known classes exactly".into(),
            ));
        }
        for h in heads.values() {
            if h.weight.shape() != [config.features] || !h.bias.shape().is_empty() {
                return Err(Error::InvalidShape("head shape does not match feature dim".into()));
            }
        }
        Ok(Self {
            config,
            backbone,
            heads,
            known_classes,
            step,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// `Y^t`, background first; also the logit channel order.
    pub fn known_classes(&self) -> &[ClassId] {
        &self.known_classes
    }

    pub fn head(&self, class: ClassId) -> Option<&Head> {
        self.heads.get(&class)
    }

    pub fn head_mut(&mut self, class: ClassId) -> Option<&mut Head> {
        self.heads.get_mut(&class)
    }

    pub fn backbone_tensors(&self) -> [&Tensor; 4] {
        self.backbone.tensors()
    }

    /// Reorders the logit channels; class ids and parameters are unchanged.
    pub fn with_class_order(&self, order: &[ClassId]) -> Result<Self> {
        let mut a = order.to_vec();
        let mut b = self.known_classes.clone();
        a.sort_unstable();
        b.sort_unstable();
        if a != b {
            return Err(Error::Alignment("class order must permute known classes".into()));
        }
        let mut out = self.clone();
        out.known_classes = order.to_vec();
        Ok(out)
    }

    /// Canonical parameter names: backbone first, then `head.<id>.weight` /
    /// `head.<id>.bias` in channel order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = BACKBONE_NAMES.iter().map(|s| s.to_string()).collect();
        for c in &self.known_classes {
            names.push(format!("head.{c}.weight"));
            names.push(format!("head.{c}.bias"));
        }
        names
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.backbone.tensors().into_iter().collect();
        for c in &self.known_classes {
            let h = &self.heads[c];
            out.push(&h.weight);
            out.push(&h.bias);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.backbone.tensors_mut().into_iter().collect();
        let mut by_class: BTreeMap<ClassId, &mut Head> =
            self.heads.iter_mut().map(|(k, v)| (*k, v)).collect();
        for c in &self.known_classes {
            let h = by_class.remove(c).expect("head per known class");
            out.push(&mut h.weight);
            out.push(&mut h.bias);
        }
        out
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.param_names().into_iter().zip(self.params()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|t| t.is_finite())
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        let s = image.shape();
        if s.len() != 3 || s[2] != self.config.in_channels {
            return Err(Error::InvalidInput(format!(
                "expected an [H, W, {}] image, got {:?}",
                self.config.in_channels, s
            )));
        }
        Ok(())
    }

    /// Records the forward pass; parameters become leaves when `trainable`.
    pub fn forward_on_tape(&self, tape: &mut Tape, image: &Tensor, trainable: bool) -> Result<TapeForward> {
        self.check_image(image)?;
        let params: Vec<Var> = self
            .params()
            .into_iter()
            .map(|t| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        let x = tape.constant(image.clone());
        let h = tape.conv2d(x, params[0], params[1])?;
        let h = tape.relu(h);
        let f = tape.conv2d(h, params[2], params[3])?;
        let features = tape.relu(f);
        let k = self.known_classes.len();
        let weights: Vec<Var> = (0..k).map(|i| params[4 + 2 * i]).collect();
        let biases: Vec<Var> = (0..k).map(|i| params[5 + 2 * i]).collect();
        let w = tape.stack(&weights)?;
        let b = tape.stack(&biases)?;
        let logits = tape.pixel_linear(features, w, b)?;
        Ok(TapeForward {
            params,
            features,
            logits,
        })
    }

    pub fn forward(&self, image: &Tensor) -> Result<ForwardOutput> {
        let mut tape = Tape::new();
        let out = self.forward_on_tape(&mut tape, image, false)?;
        let logits = tape.value(out.logits).clone();
        let probs = crate::numerics::softmax(&logits)?;
        Ok(ForwardOutput {
            features: tape.value(out.features).clone(),
            logits,
            probs: ProbVolume {
                values: probs,
                class_order: self.known_classes.clone(),
            },
        })
    }

    /// Per-pixel argmax; ties go to the earliest class in channel order.
    pub fn predict(&self, image: &Tensor) -> Result<Mask> {
        let out = self.forward(image)?;
        Ok(argmax_mask(&out.logits, &self.known_classes))
    }

    /// Moves to the next learning step, adding heads for `new_classes`
    /// (foreground only; the background is implicitly part of the step).
    pub fn extend_classifier(&self, new_classes: &[ClassId], init: HeadInit, rng: &mut Rng) -> Result<Self> {
        for (i, &c) in new_classes.iter().enumerate() {
            if c == BACKGROUND || self.heads.contains_key(&c) || new_classes[..i].contains(&c) {
                return Err(Error::ScheduleViolation(format!(
                    "class {c} is already known or repeated"
                )));
            }
        }
        let mut next = self.clone();
        next.step = self.step + 1;
        let bg = self.heads[&BACKGROUND].clone();
        match init {
            HeadInit::Background => {
                // |C^t| counts the background alongside the new classes.
                let shift = ((new_classes.len() + 1) as f64).ln();
                let bias = bg.bias_value() - shift;
                for &c in new_classes {
                    next.heads.insert(c, Head::new(bg.weight.data().to_vec(), bias));
                }
                next.heads.get_mut(&BACKGROUND).expect("background head").bias = Tensor::scalar(bias);
            }
            HeadInit::Random => {
                for &c in new_classes {
                    next.heads.insert(c, Head::random(self.config.features, rng));
                }
            }
        }
        next.known_classes.extend_from_slice(new_classes);
        Ok(next)
    }

    pub fn to_archive(&self) -> TensorArchive {
        let mut ar = TensorArchive::new("model");
        ar.set_meta("step", self.step.to_string());
        ar.set_meta(
            "known_classes",
            self.known_classes
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        let c = &self.config;
        ar.set_meta(
            "backbone",
            format!("{},{},{},{}", c.in_channels, c.hidden, c.features, c.kernel),
        );
        for (name, t) in self.named_params() {
            ar.push_tensor(name, t.clone());
        }
        ar
    }

    pub fn from_archive(ar: &TensorArchive) -> Result<Self> {
        ar.expect_kind("model")?;
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let step: usize = ar.meta("step")?.parse().map_err(|_| bad("bad step"))?;
        let known: Vec<ClassId> = ar
            .meta("known_classes")?
            .split(',')
            .map(|s| s.parse().map_err(|_| bad("bad class list")))
            .collect::<Result<_>>()?;
        let dims: Vec<usize> = ar
            .meta("backbone")?
            .split(',')
            .map(|s| s.parse().map_err(|_| bad("bad backbone config")))
            .collect::<Result<_>>()?;
        if dims.len() != 4 {
            return Err(bad("bad backbone config"));
        }
        let config = BackboneConfig {
            in_channels: dims[0],
            hidden: dims[1],
            features: dims[2],
            kernel: dims[3],
        };
        let backbone = BACKBONE_NAMES
            .iter()
            .map(|n| ar.tensor(n).cloned())
            .collect::<Result<Vec<_>>>()?;
        let mut heads = BTreeMap::new();
        for &c in &known {
            heads.insert(
                c,
                Head {
                    weight: ar.tensor(&format!("head.{c}.weight"))?.clone(),
                    bias: ar.tensor(&format!("head.{c}.bias"))?.clone(),
                },
            );
        }
        Self::from_parts(config, backbone, heads, known, step)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive().write_file(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&TensorArchive::read_file(path)?)
    }
}

/// Argmax over the last axis of `[H, W, K]` logits, mapped to class ids.
pub fn argmax_mask(logits: &Tensor, order: &[ClassId]) -> Mask {
    let s = logits.shape();
    let k = order.len();
    let labels = logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = i;
                }
            }
            order[best]
        })
        .collect();
    Mask::new(s[0], s[1], labels).expect("logit grid matches mask")
}

/// A uniformly random image in `[0, 1)`, used by tests and benches.
pub fn random_image(height: usize, width: usize, channels: usize, rng: &mut Rng) -> Tensor {
    let n = height * width * channels;
    Tensor::new(vec![height, width, channels], (0..n).map(|_| rng.gen::<f64>()).collect())
        .expect("shape matches")
}
