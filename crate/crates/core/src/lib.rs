//! Synthetic augmentation of small, imbalanced image datasets with
//! class-specific variational autoencoders and latent interpolation.

pub mod augment;
pub mod autodiff;
pub mod checkpoint;
pub mod classifier;
mod conv;
pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod vae;

pub use augment::{classical_augment, generate_synthetic, interpolate, AugmentPlan, ClassicalOp};
pub use autodiff::{grad_check, grad_check_many, Gradients, Tape, Var};
pub use classifier::{train_classifier, ClassifierConfig, ClassifierModel, PlateauScheduler};
pub use data::{DatasetManifest, ImageBuffer, ToySpec};
pub use error::{Error, Result};
pub use pipeline::{run_experiment, Profile, RunConfig};
pub use rng::RngStream;
pub use tensor::{ElementwiseOp, ReduceOp, Tensor};
pub use vae::{train_class_vae, VaeConfig, VaeModel};
