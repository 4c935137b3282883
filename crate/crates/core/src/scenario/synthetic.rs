use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::labels::{ClassId, Mask, BACKGROUND};
use crate::numerics::Tensor;
use crate::rng::{rng_for, Rng};
use crate::{Error, Result};

const MAX_ATTEMPTS: u64 = 64;
const PLACEMENT_TRIES: usize = 400;
const FREQ_TOLERANCE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_fg_classes: usize,
    pub num_images: usize,
    pub height: usize,
    pub width: usize,
    pub blobs_per_image: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_fg_classes: 5,
            num_images: 100,
            height: 16,
            width: 16,
            blobs_per_image: 2,
        }
    }
}

impl SyntheticConfig {
    fn blob_radius(&self) -> (usize, usize) {
        let side = self.height.min(self.width);
        (side / 8, (side / 4).max(side / 8 + 1))
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Generation(m));
        if self.height < 16 || self.width < 16 {
            return bad(format!("images must be at least 16x16, got {}x{}", self.height, self.width));
        }
        if self.num_fg_classes == 0 || self.num_fg_classes > ClassId::MAX as usize {
            return bad(format!("cannot generate {} classes", self.num_fg_classes));
        }
        if self.blobs_per_image == 0 || self.blobs_per_image > self.num_fg_classes {
            return bad(format!(
                "{} blobs per image need as many distinct classes, have {}",
                self.blobs_per_image, self.num_fg_classes
            ));
        }
        // boxes of the smallest blob must tile at most half the image
        let (rmin, _) = self.blob_radius();
        let cell = (2 * rmin + 1).pow(2);
        if self.blobs_per_image * cell * 2 > self.height * self.width {
            return bad(format!(
                "{} blobs do not fit in a {}x{} image",
                self.blobs_per_image, self.height, self.width
            ));
        }
        Ok(())
    }
}

/// Colour of a class, evenly spaced on the hue circle.
fn class_color(c: ClassId, n: usize) -> [f64; 3] {
    let h = (f64::from(c) - 1.0) / n as f64 * 6.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as usize {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [0.15 + 0.7 * r, 0.15 + 0.7 * g, 0.15 + 0.7 * b]
}

/// Stripe texture in `[0, 1]` with a class-specific period and direction.
fn class_texture(c: ClassId, y: usize, x: usize) -> f64 {
    let period = 2 + (c as usize % 3);
    let v = match c % 2 {
        0 => y + x,
        _ => y,
    };
    if (v / period).is_multiple_of(2) {
        1.0
    } else {
        0.0
    }
}

#[derive(Clone, Copy)]
struct Blob {
    cy: isize,
    cx: isize,
    ry: isize,
    rx: isize,
    elliptic: bool,
}

impl Blob {
    fn covers(&self, y: isize, x: isize) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        if self.elliptic {
            let (a, b) = (self.ry as f64 + 0.5, self.rx as f64 + 0.5);
            (dy as f64 / a).powi(2) + (dx as f64 / b).powi(2) <= 1.0
        } else {
            dy.abs() <= self.ry && dx.abs() <= self.rx
        }
    }

    /// Bounding boxes are kept one pixel apart.
    fn clear_of(&self, other: &Blob) -> bool {
        (self.cy - other.cy).abs() > self.ry + other.ry + 1
            || (self.cx - other.cx).abs() > self.rx + other.rx + 1
    }
}

fn place_blobs(cfg: &SyntheticConfig, n: usize, rng: &mut Rng) -> Option<Vec<Blob>> {
    let (rmin, rmax) = cfg.blob_radius();
    let mut blobs: Vec<Blob> = Vec::with_capacity(n);
    for _ in 0..PLACEMENT_TRIES {
        if blobs.len() == n {
            break;
        }
        let ry = rng.gen_range(rmin..=rmax) as isize;
        let rx = rng.gen_range(rmin..=rmax) as isize;
        let b = Blob {
            cy: rng.gen_range(ry..cfg.height as isize - ry),
            cx: rng.gen_range(rx..cfg.width as isize - rx),
            ry,
            rx,
            elliptic: rng.gen_bool(0.5),
        };
        if blobs.iter().all(|o| b.clear_of(o)) {
            blobs.push(b);
        }
    }
    (blobs.len() == n).then_some(blobs)
}

/// Balanced deck of class ids, dealt so no image repeats a class.
fn deal_classes(cfg: &SyntheticConfig, rng: &mut Rng) -> Vec<Vec<ClassId>> {
    let k = cfg.blobs_per_image;
    let total = cfg.num_images * k;
    let mut deck: Vec<ClassId> = (0..total).map(|i| (i % cfg.num_fg_classes) as ClassId + 1).collect();
    deck.shuffle(rng);
    let mut hands: Vec<Vec<ClassId>> = vec![Vec::with_capacity(k); cfg.num_images];
    let mut leftovers = Vec::new();
    for (i, c) in deck.into_iter().enumerate() {
        let hand = &mut hands[i / k];
        if hand.contains(&c) {
            leftovers.push(c);
        } else {
            hand.push(c);
        }
    }
    // refill short hands with any class they lack
    for hand in hands.iter_mut() {
        while hand.len() < k {
            let pick = leftovers
                .iter()
                .position(|c| !hand.contains(c))
                .map(|i| leftovers.swap_remove(i))
                .unwrap_or_else(|| {
                    let missing: Vec<ClassId> = (1..=cfg.num_fg_classes as ClassId).filter(|c| !hand.contains(c)).collect();
                    missing[rng.gen_range(0..missing.len())]
                });
            hand.push(pick);
        }
    }
    hands
}

fn render(cfg: &SyntheticConfig, classes: &[ClassId], blobs: &[Blob], rng: &mut Rng) -> (Tensor, Mask) {
    let (h, w) = (cfg.height, cfg.width);
    let noise = Normal::new(0.0, 0.06).expect("valid std");
    let mut labels = vec![BACKGROUND; h * w];
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let owner = blobs.iter().position(|b| b.covers(y as isize, x as isize));
            let rgb = match owner {
                Some(i) => {
                    let c = classes[i];
                    labels[y * w + x] = c;
                    let t = 0.8 + 0.2 * class_texture(c, y, x);
                    class_color(c, cfg.num_fg_classes).map(|v| v * t)
                }
                None => [0.5, 0.5, 0.5],
            };
            for v in rgb {
                data.push((v + noise.sample(rng)).clamp(0.0, 1.0));
            }
        }
    }
    (
        Tensor::new(vec![h, w, 3], data).expect("sized"),
        Mask::new(h, w, labels).expect("sized"),
    )
}

fn audit(cfg: &SyntheticConfig, corpus: &[Sample]) -> bool {
    let c = cfg.num_fg_classes;
    let mut pixels = vec![0usize; c + 1];
    let mut images = vec![0usize; c + 1];
    for s in corpus {
        for &l in s.mask.labels() {
            pixels[l as usize] += 1;
        }
        for l in s.mask.present_classes() {
            images[l as usize] += 1;
        }
    }
    let fg: usize = pixels[1..].iter().sum();
    let uniform = fg as f64 / c as f64;
    let min_images = ((cfg.num_images as f64 * 0.1).ceil() as usize)
        .min(cfg.num_images * cfg.blobs_per_image / c)
        .max(1);
    (1..=c).all(|k| {
        (pixels[k] as f64 - uniform).abs() <= FREQ_TOLERANCE * uniform && images[k] >= min_images
    })
}

fn attempt(cfg: &SyntheticConfig, seed: u64, attempt: u64) -> Result<Vec<Sample>> {
    let mut deal_rng = rng_for(seed, &[attempt, u64::MAX]);
    let hands = deal_classes(cfg, &mut deal_rng);
    hands
        .iter()
        .enumerate()
        .map(|(i, classes)| {
            let mut rng = rng_for(seed, &[attempt, i as u64]);
            let blobs = place_blobs(cfg, classes.len(), &mut rng).ok_or_else(|| {
                Error::Generation(format!("could not place {} blobs in image {i}", classes.len()))
            })?;
            let (image, mask) = render(cfg, classes, &blobs, &mut rng);
            Ok(Sample {
                id: format!("img{i:05}"),
                image,
                mask,
            })
        })
        .collect()
}

/// Deterministic corpus of noisy images with coloured, textured blobs.
/// Corpora failing the class-balance audit are regenerated.
pub fn generate_synthetic(seed: u64, cfg: &SyntheticConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let mut last = String::from("class-balance audit failed");
    for a in 0..MAX_ATTEMPTS {
        match attempt(cfg, seed, a) {
            Ok(corpus) if audit(cfg, &corpus) => return Ok(corpus),
            Ok(_) => {}
            Err(Error::Generation(m)) => last = m,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Generation(format!(
        "no usable corpus after {MAX_ATTEMPTS} attempts: {last}"
    )))
}
