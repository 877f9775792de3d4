//! Synthetic samples by convex combination of same-class latent means,
//! plus the classical pixel-permutation augmentations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::image::ImageBuffer;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;
use crate::vae::{images_to_batch, VaeModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpolationSpec {
    pub alpha: f64,
    pub i: usize,
    pub j: usize,
}

impl InterpolationSpec {
    pub fn new(alpha: f64, i: usize, j: usize) -> Result<Self> {
        check_alpha(alpha)?;
        if i == j {
            return Err(Error::Contract(format!(
                "interpolation pair ({i}, {j}) must be distinct"
            )));
        }
        Ok(Self { alpha, i, j })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassicalOp {
    #[serde(rename = "rot90")]
    Rot90,
    #[serde(rename = "rot180")]
    Rot180,
    #[serde(rename = "rot270")]
    Rot270,
    #[serde(rename = "flip_h")]
    FlipH,
    #[serde(rename = "flip_v")]
    FlipV,
}

impl ClassicalOp {
    pub const ALL: [ClassicalOp; 5] = [
        ClassicalOp::Rot90,
        ClassicalOp::Rot180,
        ClassicalOp::Rot270,
        ClassicalOp::FlipH,
        ClassicalOp::FlipV,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClassicalOp::Rot90 => "rot90",
            ClassicalOp::Rot180 => "rot180",
            ClassicalOp::Rot270 => "rot270",
            ClassicalOp::FlipH => "flip_h",
            ClassicalOp::FlipV => "flip_v",
        }
    }

    pub fn inverse(self) -> Self {
        match self {
            ClassicalOp::Rot90 => ClassicalOp::Rot270,
            ClassicalOp::Rot270 => ClassicalOp::Rot90,
            op => op,
        }
    }
}

impl fmt::Display for ClassicalOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassicalOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::Contract(format!("unknown augmentation {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPlan {
    /// Synthetic images to generate, indexed by class.
    pub counts: Vec<usize>,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub classical_ops: Vec<ClassicalOp>,
    /// Whether synthetic images also receive classical augmentation.
    pub augment_synthetic: bool,
    pub seed: u64,
}

impl Default for AugmentPlan {
    fn default() -> Self {
        Self {
            counts: vec![300; 3],
            alpha_lo: 0.2,
            alpha_hi: 0.8,
            classical_ops: ClassicalOp::ALL.to_vec(),
            augment_synthetic: false,
            seed: 42,
        }
    }
}

impl AugmentPlan {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.alpha_lo && self.alpha_lo <= self.alpha_hi && self.alpha_hi <= 1.0) {
            return Err(Error::Contract(format!(
                "alpha range [{}, {}] must satisfy 0 <= lo <= hi <= 1",
                self.alpha_lo, self.alpha_hi
            )));
        }
        Ok(())
    }

    pub fn count_for(&self, class: usize) -> usize {
        self.counts.get(class).copied().unwrap_or(0)
    }

    pub fn stream(&self, class: usize) -> RngStream {
        RngStream::new(self.seed, &format!("augment/{class}"))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::Domain(format!("alpha {alpha} is outside [0, 1]")))
    }
}

/// Weights `(w1, w2)` with `w1 + w2 == 1` exactly, chosen so that swapping
/// the endpoints together with `alpha -> 1 - alpha` swaps the weights.
fn weights(alpha: f64) -> (f64, f64) {
    if alpha >= 0.5 {
        (alpha, 1.0 - alpha)
    } else {
        let w2 = 1.0 - alpha;
        (1.0 - w2, w2)
    }
}

/// `alpha · z1 + (1 − alpha) · z2`, componentwise.
pub fn interpolate(z1: &[f64], z2: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    if z1.len() != z2.len() {
        return Err(Error::dim(format!(
            "cannot interpolate latents of length {} and {}",
            z1.len(),
            z2.len()
        )));
    }
    let (w1, w2) = weights(alpha);
    Ok(z1
        .iter()
        .zip(z2)
        .map(|(&a, &b)| if a == b { a } else { w1 * a + w2 * b })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticImage {
    pub image: ImageBuffer,
    pub source: InterpolationSpec,
}

/// Cycles through all ordered pairs `(i, j)`, `i != j`, reshuffling after
/// every full pass.
struct PairCycle {
    pairs: Vec<(usize, usize)>,
    next: usize,
}

impl PairCycle {
    fn new(n: usize) -> Self {
        let pairs = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .collect::<Vec<_>>();
        let next = pairs.len();
        Self { pairs, next }
    }

    fn draw(&mut self, rng: &mut RngStream) -> (usize, usize) {
        if self.next == self.pairs.len() {
            rng.shuffle(&mut self.pairs);
            self.next = 0;
        }
        self.next += 1;
        self.pairs[self.next - 1]
    }
}

// Largest f64 below 1 and the smallest positive normal, keeping decoded
// pixels inside the open unit interval even when the sigmoid saturates.
const OPEN_HI: f64 = 1.0 - f64::EPSILON / 2.0;
const OPEN_LO: f64 = f64::MIN_POSITIVE;

/// Decodes `count` interpolations between the latent means of `class_images`.
pub fn generate_synthetic(
    model: &VaeModel,
    class_images: &[ImageBuffer],
    count: usize,
    plan: &AugmentPlan,
    rng: &mut RngStream,
) -> Result<Vec<SyntheticImage>> {
    plan.validate()?;
    if class_images.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "class {} has {} images; interpolation needs at least 2",
            model.class_label,
            class_images.len()
        )));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let refs: Vec<&ImageBuffer> = class_images.iter().collect();
    let (mu, _) = model.encode(&images_to_batch(&refs)?)?;

    let mut pairs = PairCycle::new(class_images.len());
    let mut specs = Vec::with_capacity(count);
    let mut latents = Vec::with_capacity(count * model.latent_dim);
    for _ in 0..count {
        let (i, j) = pairs.draw(rng);
        let alpha = rng.uniform_range(plan.alpha_lo, plan.alpha_hi);
        latents.extend(interpolate(mu.row(i), mu.row(j), alpha)?);
        specs.push(InterpolationSpec { alpha, i, j });
    }
    let decoded = model.decode(&Tensor::new(vec![count, model.latent_dim], latents)?)?;
    let g = model.geometry;
    specs
        .into_iter()
        .enumerate()
        .map(|(r, source)| {
            let pixels = decoded
                .row(r)
                .iter()
                .map(|v| v.clamp(OPEN_LO, OPEN_HI))
                .collect();
            Ok(SyntheticImage {
                image: ImageBuffer::new(g.width, g.height, g.channels, pixels)?,
                source,
            })
        })
        .collect()
}

/// Applies a rotation (clockwise) or mirror to the pixel grid.
pub fn classical_augment(image: &ImageBuffer, op: ClassicalOp) -> Result<ImageBuffer> {
    let (w, h, c) = (image.width, image.height, image.channels);
    if matches!(op, ClassicalOp::Rot90 | ClassicalOp::Rot270) && w != h {
        return Err(Error::dim(format!(
            "{op} needs a square image, got {w}x{h}"
        )));
    }
    // Source pixel for each output position (r, col).
    let src = |r: usize, col: usize| -> (usize, usize) {
        match op {
            ClassicalOp::Rot90 => (h - 1 - col, r),
            ClassicalOp::Rot180 => (h - 1 - r, w - 1 - col),
            ClassicalOp::Rot270 => (col, w - 1 - r),
            ClassicalOp::FlipH => (r, w - 1 - col),
            ClassicalOp::FlipV => (h - 1 - r, col),
        }
    };
    let mut pixels = Vec::with_capacity(image.pixels.len());
    for r in 0..h {
        for col in 0..w {
            let (sr, sc) = src(r, col);
            let at = (sr * w + sc) * c;
            pixels.extend_from_slice(&image.pixels[at..at + c]);
        }
    }
    ImageBuffer::new(w, h, c, pixels)
}
