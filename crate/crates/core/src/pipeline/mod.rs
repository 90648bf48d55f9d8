//! Datasets, caches, training, evaluation and score fusion.

pub mod cache;
pub mod dataset;
pub mod eval;
pub mod experiment;
pub mod fusion;
pub mod report;
pub mod train;

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

pub use cache::{load_samples, prepare_caches, PrepConfig, PrepReport, SampleKind, SampleSet};
pub use dataset::{
    holdout_split, ingest_modelnet, make_synthetic_dataset, DatasetEntry, DatasetManifest, ShapeKind, Split,
};
pub use eval::{average_per_class_accuracy, evaluate, EvalSummary, Evaluation};
pub use fusion::{fit_fusion_weights, fuse_scores, FusionWeights, ScoreTransform};
pub use train::{train, EpochRow, TrainConfig, TrainLog, TrainObserver};

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}-{n}", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
