//! Metrics, PCA and report emission.

pub mod metrics;
pub mod pca;
pub mod report;

pub use metrics::{build_confusion, metrics_from_confusion, ConfusionMatrix, MetricsReport};
pub use pca::{mean_nearest_neighbor_distance, pca_project, Pca};
pub use report::{emit_report, MetricsRow, PcaPoint};
