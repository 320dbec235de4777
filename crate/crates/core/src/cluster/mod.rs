//! K-means clustering and clustering-quality metrics.

mod hungarian;
mod kmeans;
mod metrics;

pub use hungarian::{hungarian_match, Matching};
pub use kmeans::{kmeans, KMeansConfig, KMeansResult};
pub use metrics::{contingency, evaluate, matched_accuracy, MetricsReport, NMI_NORMALIZATION};

pub(crate) use kmeans::cluster_means;
