//! Seeded, per-class (stratified) split assignment.

use crate::data::manifest::{DatasetManifest, ManifestRow, Provenance, Split};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Number of rows a class of `n` gives to a held-out split:
/// `round(fraction · n)`, at least 1 and at most `n − 1`.
pub fn holdout_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1))
}

fn carve(
    manifest: &DatasetManifest,
    fraction: f64,
    eligible: impl Fn(&ManifestRow) -> bool,
    held_out: Split,
    rest: Split,
    rng: &mut RngStream,
) -> Result<DatasetManifest> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Contract(format!(
            "split fraction {fraction} must lie strictly between 0 and 1"
        )));
    }
    let mut out = manifest.clone();
    for class in 0..manifest.num_classes() {
        let mut idx: Vec<usize> = manifest
            .rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label == class && eligible(r))
            .map(|(i, _)| i)
            .collect();
        if idx.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "class {class} has {} eligible real images; at least 2 are needed to split",
                idx.len()
            )));
        }
        rng.shuffle(&mut idx);
        let k = holdout_count(idx.len(), fraction);
        for (n, &i) in idx.iter().enumerate() {
            out.rows[i].split = if n < k { held_out } else { rest };
        }
    }
    out.validate()?;
    Ok(out)
}

/// Assigns `round(test_fraction · n)` real images of every class to the
/// test split and the rest to train. Synthetic rows are left untouched.
pub fn stratified_split(
    manifest: &DatasetManifest,
    test_fraction: f64,
    rng: &mut RngStream,
) -> Result<DatasetManifest> {
    carve(
        manifest,
        test_fraction,
        |r| r.provenance == Provenance::Real,
        Split::Test,
        Split::Train,
        rng,
    )
}

/// Moves a stratified `val_fraction` of the real training rows to validation.
pub fn assign_validation(
    manifest: &DatasetManifest,
    val_fraction: f64,
    rng: &mut RngStream,
) -> Result<DatasetManifest> {
    carve(
        manifest,
        val_fraction,
        |r| r.provenance == Provenance::Real && matches!(r.split, Split::Train | Split::Val),
        Split::Val,
        Split::Train,
        rng,
    )
}
