//! Corpus ingestion, feature caching, normalization, oversampling, folds and metrics.

pub mod cache;
mod folds;
mod instance;
mod manifest;
mod metrics;
mod normalize;
pub mod smote;

pub use cache::{config_hash, read_cache, read_index, write_cache, CacheIndex};
pub use folds::{make_folds, FoldPlan};
pub use instance::{assemble, prepare_modality, AssemblyConfig, Instance, SyntheticOrigin};
pub use manifest::{load_manifest, Label, Manifest, ManifestEntry};
pub use metrics::{
    auc, compute_metrics, mean_std, Confusion, MetricReport, Metrics, Summary, METRIC_NAMES,
};
pub use normalize::{ColumnStats, Normalizer};
pub use smote::smote;
