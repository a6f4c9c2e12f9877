//! Run configuration, checkpoints, training, evaluation, prediction,
//! gradient checking and synthetic dataset export.

mod checkpoint;
mod config;
mod evaluate;
mod gradcheck;
mod train;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use evaluate::{evaluate, evaluate_cases, mean_foreground_dsc, metrics_csv, predict, predict_case, VolumeMetrics};
pub use gradcheck::{
    gradcheck, gradcheck_with, tiny_config, training_loss, GradcheckReport, GroupResult, LossFn,
    GRADCHECK_STEP, GRADCHECK_TOLERANCE,
};
pub use train::{
    load_split, synthetic_cases, train, train_cases, train_observed, Case, EpochStats, StepObserver,
    TrainOutcome,
};

use crate::data::{write_volume, DatasetManifest, ManifestEntry, Split, SvolVolume, SyntheticSet};
use crate::error::Result;
use std::fs;
use std::path::{Path, PathBuf};

/// Writes every case as `synthNNN.svol` / `synthNNN_label.svol` under
/// `dir`, the first `n_train` tagged train, plus `manifest.tsv`. Returns
/// the manifest path.
pub fn export_synthetic(set: &SyntheticSet, n_train: usize, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = DatasetManifest::default();
    for (i, c) in set.cases.iter().enumerate() {
        let image = format!("synth{i:03}.svol");
        let label = format!("synth{i:03}_label.svol");
        write_volume(&SvolVolume::Image(c.image.clone()), dir.join(&image))?;
        write_volume(&SvolVolume::Labels(c.label.clone()), dir.join(&label))?;
        manifest.entries.push(ManifestEntry {
            image: image.into(),
            label: label.into(),
            split: if i < n_train { Split::Train } else { Split::Test },
        });
    }
    let path = dir.join("manifest.tsv");
    fs::write(&path, manifest.to_text())?;
    Ok(path)
}
