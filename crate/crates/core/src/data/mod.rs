//! Dataset representation, image I/O, splitting and the toy generator.

pub mod image;
pub mod manifest;
pub mod split;
pub mod toy;

pub use image::{read_image, write_image, ImageBuffer, ImageGeometry};
pub use manifest::{
    check_no_synthetic_leak, image_rel_path, Dataset, DatasetManifest, ManifestRow, Provenance,
    Split, MANIFEST_FILE,
};
pub use split::{assign_validation, holdout_count, stratified_split};
pub use toy::{generate_toy_images, write_toy_dataset, ToyImage, ToySpec};
