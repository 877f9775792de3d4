//! Deterministic imbalanced toy dataset of noisy sinusoidal gratings.
//!
//! Class `k` is a grating with its own spatial frequency and base
//! orientation. Each image turns its grating by a random angle of up to
//! `orientation_jitter_deg`; at the default full half-turn the class is
//! carried by frequency alone, so rotations and mirroring keep labels.
//! Minority-class images are blended toward the majority-class frequency at
//! the same orientation by a random fraction of `overlap`, scaled per class,
//! and every pixel receives clipped Gaussian noise. The default weights make
//! class 1 the most confusable class.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::image::{write_image, ImageBuffer};
use crate::data::manifest::{
    image_rel_path, DatasetManifest, ManifestRow, Provenance, Split, MANIFEST_FILE,
};
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    pub counts: Vec<usize>,
    pub width: usize,
    pub height: usize,
    /// Base grating orientation per class, in degrees.
    pub orientations_deg: Vec<f64>,
    /// Width of the uniform per-image orientation offset, in degrees.
    pub orientation_jitter_deg: f64,
    /// Spatial frequency per class, in cycles per image side.
    pub frequencies: Vec<f64>,
    /// Amplitude of the grating around mid-gray.
    pub contrast: f64,
    /// Standard deviation of the additive pixel noise.
    pub noise: f64,
    /// Upper bound of the blend fraction toward the majority pattern.
    pub overlap: f64,
    /// Per-class multiplier on `overlap`; the majority class uses 0.
    pub overlap_weights: Vec<f64>,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            counts: vec![65, 91, 165],
            width: 32,
            height: 32,
            orientations_deg: vec![0.0, 60.0, 120.0],
            orientation_jitter_deg: 180.0,
            frequencies: vec![3.0, 4.0, 5.0],
            contrast: 3.0,
            noise: 1.0,
            overlap: 0.6,
            overlap_weights: vec![0.5, 1.0, 0.0],
            seed: 42,
        }
    }
}

impl ToySpec {
    pub fn with_counts(mut self, counts: Vec<usize>) -> Self {
        self.counts = counts;
        self
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.counts.len();
        if c == 0 || self.counts.contains(&0) {
            return Err(Error::Contract(format!(
                "toy class counts must all be positive, got {:?}",
                self.counts
            )));
        }
        if self.orientations_deg.len() != c
            || self.frequencies.len() != c
            || self.overlap_weights.len() != c
        {
            return Err(Error::Contract(format!(
                "per-class toy parameters must have {c} entries"
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Contract("toy image size must be positive".into()));
        }
        if !(self.noise >= 0.0
            && self.overlap >= 0.0
            && self.contrast >= 0.0
            && self.orientation_jitter_deg >= 0.0)
        {
            return Err(Error::Contract(
                "noise, overlap, contrast and orientation jitter must be non-negative".into(),
            ));
        }
        Ok(())
    }

    fn majority_class(&self) -> usize {
        // ties resolve to the highest index
        (0..self.counts.len())
            .max_by_key(|&k| self.counts[k])
            .unwrap_or(0)
    }

    fn grating(&self, theta_deg: f64, f: f64) -> Vec<f64> {
        let theta = theta_deg.to_radians();
        let (c, s) = (theta.cos(), theta.sin());
        let mut out = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let u = x as f64 / self.width as f64;
                let v = y as f64 / self.height as f64;
                out.push((2.0 * PI * f * (u * c + v * s)).cos());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyImage {
    pub image_id: String,
    pub label: usize,
    pub image: ImageBuffer,
}

/// Generates every toy image in class order. Each image draws from its
/// own stream keyed by (seed, class, index).
pub fn generate_toy_images(spec: &ToySpec) -> Result<Vec<ToyImage>> {
    spec.validate()?;
    let majority = spec.majority_class();
    let mut out = Vec::with_capacity(spec.counts.iter().sum());
    for (label, &count) in spec.counts.iter().enumerate() {
        let reach = if label == majority {
            0.0
        } else {
            spec.overlap * spec.overlap_weights[label]
        };
        for i in 0..count {
            let mut rng = RngStream::new(spec.seed, &format!("toy/{label}/{i}"));
            let theta = spec.orientations_deg[label] + spec.orientation_jitter_deg * rng.uniform();
            let own = spec.grating(theta, spec.frequencies[label]);
            let major = spec.grating(theta, spec.frequencies[majority]);
            let beta = reach * rng.uniform();
            let pixels = own
                .iter()
                .zip(&major)
                .map(|(&p, &q)| {
                    let mut v = 0.5 + spec.contrast * ((1.0 - beta) * p + beta * q);
                    if spec.noise > 0.0 {
                        v += spec.noise * rng.normal();
                    }
                    v.clamp(0.0, 1.0)
                })
                .collect();
            out.push(ToyImage {
                image_id: format!("c{label}_{i:04}"),
                label,
                image: ImageBuffer::new(spec.width, spec.height, 1, pixels)?,
            });
        }
    }
    Ok(out)
}

/// Writes the toy images under `root/images/<class>/` plus `root/manifest.csv`.
pub fn write_toy_dataset(spec: &ToySpec, root: &Path) -> Result<DatasetManifest> {
    let images = generate_toy_images(spec)?;
    let mut rows = Vec::with_capacity(images.len());
    for img in &images {
        let rel = image_rel_path(img.label, &img.image_id);
        write_image(&root.join(&rel), &img.image)?;
        rows.push(ManifestRow {
            image_id: img.image_id.clone(),
            path: rel,
            label: img.label,
            split: Split::Unassigned,
            provenance: Provenance::Real,
        });
    }
    let manifest = DatasetManifest::new(rows)?;
    manifest.save(&root.join(MANIFEST_FILE))?;
    Ok(manifest)
}
