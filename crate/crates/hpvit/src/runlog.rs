//! Training logs: `steps.csv`, `epochs.csv` and `summary.json`.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use hpvit_core::train::{EpochRecord, StepRecord};
use hpvit_core::{TrainConfig, ViTConfig};
use serde::{Deserialize, Serialize};

use crate::dataset::DataError;

pub const STEPS_FILE: &str = "steps.csv";
pub const EPOCHS_FILE: &str = "epochs.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const STEPS_HEADER: &str = "epoch,step,group,loss,lr";
pub const EPOCHS_HEADER: &str = "epoch,mean_loss,train_accuracy";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumInfo {
    pub k: usize,
    pub seed: u64,
    pub hash: String,
    pub source_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    /// SHA-256 of the effective model and training configuration.
    pub fingerprint: String,
    pub model: ViTConfig,
    pub train: TrainConfig,
    pub classes: Vec<String>,
    pub curriculum: CurriculumInfo,
    pub epochs_done: usize,
    pub steps: u64,
    pub final_loss: f64,
    pub final_train_accuracy: f64,
    pub checkpoint: String,
    pub checkpoint_sha256: String,
}

fn step_line(r: &StepRecord) -> String {
    format!("{},{},{},{},{}\n", r.epoch, r.step, r.group, r.loss, r.lr)
}

fn epoch_line(r: &EpochRecord) -> String {
    format!("{},{},{}\n", r.epoch, r.mean_loss, r.train_accuracy)
}

fn append(path: &Path, header: &str, lines: impl Iterator<Item = String>) -> Result<(), DataError> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| DataError::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(header);
        text.push('\n');
    }
    text.extend(lines);
    f.write_all(text.as_bytes())
        .map_err(|e| DataError::io(path, e))
}

/// Appends one epoch's records to both CSV logs in `dir`.
pub fn append_epoch(
    dir: &Path,
    steps: &[StepRecord],
    epoch: &EpochRecord,
) -> Result<(), DataError> {
    append(
        &dir.join(STEPS_FILE),
        STEPS_HEADER,
        steps.iter().map(step_line),
    )?;
    append(
        &dir.join(EPOCHS_FILE),
        EPOCHS_HEADER,
        std::iter::once(epoch_line(epoch)),
    )
}

fn bad(path: &Path, line: usize, message: &str) -> DataError {
    DataError::Manifest {
        path: path.to_path_buf(),
        message: format!("line {line}: {message}"),
    }
}

fn read_rows(path: &Path, header: &str, cols: usize) -> Result<Vec<Vec<String>>, DataError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(path, 1, &e.to_string()))?;
    let found = reader.headers().map_err(|e| bad(path, 1, &e.to_string()))?;
    if found.iter().collect::<Vec<_>>().join(",") != header {
        return Err(bad(path, 1, "unexpected header"));
    }
    reader
        .records()
        .enumerate()
        .map(|(i, r)| {
            let r = r.map_err(|e| bad(path, i + 2, &e.to_string()))?;
            if r.len() == cols {
                Ok(r.iter().map(str::to_string).collect())
            } else {
                Err(bad(path, i + 2, "wrong column count"))
            }
        })
        .collect()
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, s: &str) -> Result<T, DataError> {
    s.parse().map_err(|_| bad(path, line, "unparsable field"))
}

pub fn read_steps(dir: &Path) -> Result<Vec<StepRecord>, DataError> {
    let path = dir.join(STEPS_FILE);
    read_rows(&path, STEPS_HEADER, 5)?
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let p = &path;
            Ok(StepRecord {
                epoch: field(p, i + 2, &r[0])?,
                step: field(p, i + 2, &r[1])?,
                group: field(p, i + 2, &r[2])?,
                loss: field(p, i + 2, &r[3])?,
                lr: field(p, i + 2, &r[4])?,
            })
        })
        .collect()
}

pub fn read_epochs(dir: &Path) -> Result<Vec<EpochRecord>, DataError> {
    let path = dir.join(EPOCHS_FILE);
    read_rows(&path, EPOCHS_HEADER, 3)?
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let p = &path;
            Ok(EpochRecord {
                epoch: field(p, i + 2, &r[0])?,
                mean_loss: field(p, i + 2, &r[1])?,
                train_accuracy: field(p, i + 2, &r[2])?,
            })
        })
        .collect()
}

/// Cuts both logs back to the records of epochs before `epochs_done`, so a
/// resumed run appends exactly what an uninterrupted run would have written.
pub fn truncate_to(dir: &Path, epochs_done: usize) -> Result<(), DataError> {
    let steps: Vec<_> = read_steps(dir)?
        .into_iter()
        .filter(|r| r.epoch < epochs_done)
        .collect();
    let epochs: Vec<_> = read_epochs(dir)?
        .into_iter()
        .filter(|r| r.epoch < epochs_done)
        .collect();
    for (file, header, body) in [
        (
            STEPS_FILE,
            STEPS_HEADER,
            steps.iter().map(step_line).collect::<String>(),
        ),
        (
            EPOCHS_FILE,
            EPOCHS_HEADER,
            epochs.iter().map(epoch_line).collect(),
        ),
    ] {
        let path = dir.join(file);
        fs::write(&path, format!("{header}\n{body}")).map_err(|e| DataError::io(&path, e))?;
    }
    Ok(())
}
