//! The five subcommands as plain functions over paths and options.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use autorecon_core::circuit::{generate_suite, CircuitParams, SuiteEntry, WaveformSpec};
use autorecon_core::eval::{amplitude_spectrum, feature_report, FeatureReport};
use autorecon_core::reconstruct::InitMode;
use autorecon_core::{reconstruct, train, ReconstructionResult, ReconstructionSpec, TimeSeriesSet, TrainedModel};
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{CliError, CliResult, IoContext};
use crate::files::{
    load_model, read_dataset, read_table, save_model, write_dataset, write_reconstruction_history, write_table,
    write_training_history, TIME_COLUMN,
};
use crate::gradcheck::{self, GradCheckReport};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub name: String,
    pub waveform: WaveformSpec,
}

/// Everything needed to regenerate a simulated suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub dt: f64,
    pub len: usize,
    pub circuit: CircuitParams,
    pub train: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

/// Writes `train_<k>.csv`, `test_<k>.csv` and `manifest.json` to `out_dir`.
pub fn simulate(config: &Config, out_dir: &Path) -> CliResult<Manifest> {
    let suite = generate_suite(config.seed, &config.suite())?;
    fs::create_dir_all(out_dir).at(out_dir)?;
    let write = |prefix: &str, entries: &[SuiteEntry]| -> CliResult<Vec<ManifestEntry>> {
        entries
            .iter()
            .enumerate()
            .map(|(k, e)| {
                let file = format!("{prefix}_{k}.csv");
                write_dataset(&out_dir.join(&file), &e.output.series)?;
                Ok(ManifestEntry {
                    file,
                    name: e.name.clone(),
                    waveform: e.waveform.clone(),
                })
            })
            .collect()
    };
    let manifest = Manifest {
        seed: suite.seed,
        dt: config.simulation.dt,
        len: config.simulation.len,
        circuit: config.simulation.circuit,
        train: write("train", &suite.train)?,
        test: write("test", &suite.test)?,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).at(&path)?;
    fs::write(&path, text).at(&path)?;
    info!(
        "wrote {} training and {} test sets to {}",
        manifest.train.len(),
        manifest.test.len(),
        out_dir.display()
    );
    Ok(manifest)
}

/// `train_<k>.csv` files of `dir`, ordered by `k`.
pub fn training_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir).at(dir)? {
        let path = entry.at(dir)?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let index = name
            .strip_prefix("train_")
            .and_then(|r| r.strip_suffix(".csv"))
            .and_then(|k| k.parse::<usize>().ok());
        if let Some(k) = index {
            found.push((k, path));
        }
    }
    if found.is_empty() {
        return Err(CliError::format(dir, "no train_<k>.csv datasets found"));
    }
    found.sort();
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

/// Trains on every `train_<k>.csv` in `data_dir`; writes the model and the
/// per-update loss history.
pub fn train_model(config: &Config, data_dir: &Path, model_out: &Path, history_out: &Path) -> CliResult<TrainedModel> {
    let datasets = training_files(data_dir)?
        .iter()
        .map(|p| read_dataset(p))
        .collect::<CliResult<Vec<_>>>()?;
    let n = datasets[0].n_features();
    let train_config = config.train(n);
    info!(
        "training on {} datasets: {} epochs, lr {}, {} parameters",
        datasets.len(),
        train_config.epochs,
        train_config.lr,
        train_config.net.param_count()
    );
    let (model, history) = train(&datasets, &train_config)?;
    save_model(model_out, &model)?;
    write_training_history(history_out, &history)?;
    info!("final losses {:?}", model.metadata.final_losses);
    Ok(model)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReconstructOptions {
    pub missing: Vec<String>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub weights: BTreeMap<String, f64>,
}

impl ReconstructOptions {
    pub fn spec(&self, config: &Config) -> ReconstructionSpec {
        let mut spec = ReconstructionSpec::new(self.missing.clone());
        spec.epochs = self
            .epochs
            .unwrap_or_else(|| config.reconstruction.epochs_for(self.missing.len()));
        spec.lr = self.lr.unwrap_or(config.reconstruction.lr);
        spec.init = if config.reconstruction.init == 0.0 {
            InitMode::Zeros
        } else {
            InitMode::Constant(config.reconstruction.init)
        };
        spec.weights = self.weights.clone();
        spec
    }
}

/// Result columns: `time_s`, then `<f>_xmiss`, `<f>_xhatmiss` per missing
/// feature.
pub fn write_result(path: &Path, result: &ReconstructionResult) -> CliResult<()> {
    let t = result.x_miss.first().map_or(0, Vec::len);
    let mut header = vec![TIME_COLUMN.to_string()];
    let mut columns = vec![(0..t).map(|i| result.t0 + i as f64 * result.dt).collect::<Vec<f64>>()];
    for (k, name) in result.missing.iter().enumerate() {
        header.push(format!("{name}_xmiss"));
        header.push(format!("{name}_xhatmiss"));
        columns.push(result.x_miss[k].clone());
        columns.push(result.x_hat_miss[k].clone());
    }
    write_table(path, &header, &columns)
}

pub fn reconstruct_series(
    config: &Config,
    model_path: &Path,
    data_path: &Path,
    options: &ReconstructOptions,
    out: &Path,
    history_out: &Path,
) -> CliResult<ReconstructionResult> {
    let model = load_model(model_path)?;
    let data = read_dataset(data_path)?;
    let spec = options.spec(config);
    info!(
        "reconstructing {:?}: {} epochs, lr {}",
        spec.missing, spec.epochs, spec.lr
    );
    let result = reconstruct(&model, &data, &spec)?;
    write_result(out, &result)?;
    write_reconstruction_history(history_out, &result.loss_history)?;
    info!(
        "L_red {:.6e} -> {:.6e} ({:.3e} of initial)",
        result.initial_loss,
        result.final_loss,
        result.final_loss / result.initial_loss
    );
    Ok(result)
}

/// Feature a result column refers to: `u1_xmiss` and `u1_xhatmiss` map to
/// `u1`, any other name to itself.
pub fn feature_of(column: &str) -> &str {
    column
        .strip_suffix("_xhatmiss")
        .or_else(|| column.strip_suffix("_xmiss"))
        .unwrap_or(column)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnReport {
    pub column: String,
    pub report: FeatureReport,
}

/// Compares every column of `result_path` with the matching feature of
/// `truth_path`. Writes `report.csv` plus one `spectrum_<column>.csv` per
/// result column and `spectrum_truth_<feature>.csv` per referenced feature.
pub fn evaluate(result_path: &Path, truth_path: &Path, out_dir: &Path) -> CliResult<Vec<ColumnReport>> {
    let (header, mut columns) = read_table(result_path)?;
    if header[0] != TIME_COLUMN {
        return Err(CliError::format(
            result_path,
            format!("first column must be `{TIME_COLUMN}`"),
        ));
    }
    columns.remove(0);
    let truth: TimeSeriesSet = read_dataset(truth_path)?;
    let dt = truth.dt();
    fs::create_dir_all(out_dir).at(out_dir)?;

    let mut reports = Vec::new();
    let mut truth_features: Vec<String> = Vec::new();
    for (name, values) in header[1..].iter().zip(&columns) {
        let feature = feature_of(name);
        let reference = truth
            .column_by_name(feature)
            .map_err(|_| CliError::format(truth_path, format!("no column `{feature}` for result column `{name}`")))?;
        if reference.len() != values.len() {
            return Err(CliError::format(
                result_path,
                format!("`{name}` has {} samples, truth has {}", values.len(), reference.len()),
            ));
        }
        let report = feature_report(feature, &reference, values)?;
        write_spectrum(&out_dir.join(format!("spectrum_{name}.csv")), values, dt)?;
        if !truth_features.iter().any(|f| f == feature) {
            write_spectrum(&out_dir.join(format!("spectrum_truth_{feature}.csv")), &reference, dt)?;
            truth_features.push(feature.to_string());
        }
        reports.push(ColumnReport {
            column: name.clone(),
            report,
        });
    }

    let path = out_dir.join("report.csv");
    let mut w = csv::Writer::from_path(&path).at(&path)?;
    w.write_record(["column", "feature", "mse", "rmse", "relative_rmse"])
        .at(&path)?;
    for r in &reports {
        w.write_record([
            r.column.clone(),
            r.report.feature.clone(),
            r.report.mse.to_string(),
            r.report.rmse.to_string(),
            r.report.relative_rmse.to_string(),
        ])
        .at(&path)?;
    }
    w.flush().at(&path)?;
    Ok(reports)
}

fn write_spectrum(path: &Path, series: &[f64], dt: f64) -> CliResult<()> {
    let s = amplitude_spectrum(series, dt)?;
    let header = ["frequency_hz", "magnitude"].map(String::from);
    write_table(path, &header, &[s.frequency_hz, s.magnitude])
}

pub fn grad_check(seed: u64) -> CliResult<GradCheckReport> {
    Ok(gradcheck::run(seed)?)
}
