//! On-disk formats: dataset CSV, model JSON, loss histories.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so a
//! value read back is the value written.

use std::fs;
use std::path::Path;

use autorecon_core::nn::PARAM_NAMES;
use autorecon_core::training::{LossHistory, TrainingMetadata};
use autorecon_core::{AutoencoderParams, NetConfig, ScalerParams, Tensor, TimeSeriesSet, TrainedModel};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult, IoContext};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Relative tolerance on the spacing of the time column.
pub const TIME_TOLERANCE: f64 = 1e-9;

pub const TIME_COLUMN: &str = "time_s";

pub fn write_table(path: &Path, header: &[String], columns: &[Vec<f64>]) -> CliResult<()> {
    let rows = columns.first().map_or(0, Vec::len);
    if columns.iter().any(|c| c.len() != rows) || header.len() != columns.len() {
        return Err(CliError::format(path, "ragged table"));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).at(dir)?;
    }
    let mut w = csv::Writer::from_path(path).at(path)?;
    w.write_record(header).at(path)?;
    let mut record = Vec::with_capacity(columns.len());
    for i in 0..rows {
        record.clear();
        record.extend(columns.iter().map(|c| c[i].to_string()));
        w.write_record(&record).at(path)?;
    }
    w.flush().at(path)
}

/// Header and columns of a numeric CSV with a header row.
pub fn read_table(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .at(path)?;
    let header: Vec<String> = r.headers().at(path)?.iter().map(str::to_string).collect();
    if header.is_empty() {
        return Err(CliError::format(path, "empty header"));
    }
    let mut columns = vec![Vec::new(); header.len()];
    for (line, record) in r.records().enumerate() {
        let record = record.at(path)?;
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| CliError::format(path, format!("row {}: `{field}` is not a number", line + 1)))?;
            columns[j].push(v);
        }
    }
    Ok((header, columns))
}

pub fn write_dataset(path: &Path, data: &TimeSeriesSet) -> CliResult<()> {
    let mut header = vec![TIME_COLUMN.to_string()];
    header.extend(data.feature_names().iter().cloned());
    let mut columns = vec![(0..data.len()).map(|i| data.time(i)).collect()];
    columns.extend((0..data.n_features()).map(|j| data.column(j)));
    write_table(path, &header, &columns)
}

/// Reads a dataset CSV: `time_s` first, then one column per feature. The
/// time column must be strictly increasing and equidistant.
pub fn read_dataset(path: &Path) -> CliResult<TimeSeriesSet> {
    let (header, mut columns) = read_table(path)?;
    if header[0] != TIME_COLUMN {
        return Err(CliError::format(
            path,
            format!("first column must be `{TIME_COLUMN}`, found `{}`", header[0]),
        ));
    }
    let time = columns.remove(0);
    let (t0, dt) = check_time_column(&time).map_err(|reason| CliError::format(path, reason))?;
    Ok(TimeSeriesSet::from_columns(header[1..].to_vec(), t0, dt, &columns)?)
}

/// Start time and spacing of an equidistant time column.
pub fn check_time_column(time: &[f64]) -> Result<(f64, f64), String> {
    if time.len() < 2 {
        return Err(format!("need at least 2 samples, found {}", time.len()));
    }
    let t0 = time[0];
    let dt = (time[time.len() - 1] - t0) / (time.len() - 1) as f64;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err("time column is not strictly increasing".into());
    }
    for (i, w) in time.windows(2).enumerate() {
        let step = w[1] - w[0];
        if !(step > 0.0) {
            return Err(format!("time column not strictly increasing at row {}", i + 2));
        }
        // Text round trip of large absolute times costs a few ulps.
        let slack = TIME_TOLERANCE * dt + 4.0 * f64::EPSILON * w[1].abs();
        if (step - dt).abs() > slack {
            return Err(format!(
                "time column not equidistant at row {}: step {step:e} vs {dt:e}",
                i + 2
            ));
        }
    }
    Ok((t0, dt))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Serialized [`TrainedModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub net: NetConfig,
    pub feature_names: Vec<String>,
    pub scaler: ScalerParams,
    pub tensors: Vec<NamedTensor>,
    pub metadata: TrainingMetadata,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

impl ModelFile {
    pub fn from_model(model: &TrainedModel) -> Self {
        let tensors = PARAM_NAMES
            .iter()
            .zip(model.params.tensors())
            .map(|(name, t)| NamedTensor {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect();
        Self {
            format_version: MODEL_FORMAT_VERSION,
            net: model.net,
            feature_names: model.feature_names().to_vec(),
            scaler: model.scaler.clone(),
            tensors,
            metadata: model.metadata.clone(),
        }
    }

    pub fn into_model(self) -> autorecon_core::Result<TrainedModel> {
        use autorecon_core::Error;
        self.net.validate()?;
        if self.feature_names != self.scaler.feature_names || self.feature_names.len() != self.net.n_features {
            return Err(Error::FeatureMismatch {
                expected: self.scaler.feature_names.clone(),
                actual: self.feature_names.clone(),
            });
        }
        let mut tensors = Vec::with_capacity(self.tensors.len());
        for (expected, t) in PARAM_NAMES.iter().zip(&self.tensors) {
            if t.name != *expected {
                return Err(Error::InvalidConfig(format!(
                    "expected tensor `{expected}`, found `{}`",
                    t.name
                )));
            }
        }
        for t in self.tensors {
            tensors.push(Tensor::new(t.shape, t.data)?);
        }
        let params = AutoencoderParams::from_tensors(&self.net, tensors)?;
        Ok(TrainedModel {
            net: self.net,
            params,
            scaler: self.scaler,
            metadata: self.metadata,
        })
    }
}

pub fn save_model(path: &Path, model: &TrainedModel) -> CliResult<()> {
    let text = serde_json::to_string_pretty(&ModelFile::from_model(model)).at(path)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).at(dir)?;
    }
    fs::write(path, text).at(path)
}

pub fn load_model(path: &Path) -> CliResult<TrainedModel> {
    let text = fs::read_to_string(path).at(path)?;
    let probe: VersionProbe = serde_json::from_str(&text).at(path)?;
    if probe.format_version != MODEL_FORMAT_VERSION {
        return Err(CliError::VersionMismatch {
            path: path.to_path_buf(),
            found: probe.format_version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let file: ModelFile = serde_json::from_str(&text).at(path)?;
    Ok(file.into_model()?)
}

/// `epoch,dataset,loss`, one row per parameter update.
pub fn write_training_history(path: &Path, history: &LossHistory) -> CliResult<()> {
    let header = ["epoch", "dataset", "loss"].map(String::from);
    let columns = vec![
        history.records.iter().map(|r| r.epoch as f64).collect(),
        history.records.iter().map(|r| r.dataset as f64).collect(),
        history.records.iter().map(|r| r.loss).collect(),
    ];
    write_table(path, &header, &columns)
}

/// `epoch,loss`.
pub fn write_reconstruction_history(path: &Path, losses: &[f64]) -> CliResult<()> {
    let header = ["epoch", "loss"].map(String::from);
    let columns = vec![(0..losses.len()).map(|e| e as f64).collect(), losses.to_vec()];
    write_table(path, &header, &columns)
}

/// `<dir>/<stem>.<suffix>` next to `path`.
pub fn sibling(path: &Path, suffix: &str) -> std::path::PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}
