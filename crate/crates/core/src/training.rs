//! Autoencoder training on fully observed datasets.
//!
//! Each update sees every window of one dataset: the full-series MSE is
//! accumulated on a single tape, then Adam takes exactly one step. Datasets
//! are visited in a rotating order whose start shifts by one every epoch, so
//! no dataset is always the last one before an epoch ends.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::nn::{forward_batch, forward_steps, AutoencoderParams, AutoencoderVars, NetConfig};
use crate::optim::{mse, Adam, AdamConfig};
use crate::preprocess::{
    fit_scaler, inverse_transform, overlap_mean, transform, ScalerParams, TimeSeriesSet, WindowBatch,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub net: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            lr: 0.001,
            seed: 0,
            net: NetConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    /// Loss of each dataset in the last epoch, indexed by dataset.
    pub final_losses: Vec<f64>,
}

/// A frozen autoencoder together with the scaling it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub net: NetConfig,
    pub params: AutoencoderParams,
    pub scaler: ScalerParams,
    pub metadata: TrainingMetadata,
}

impl TrainedModel {
    pub fn feature_names(&self) -> &[String] {
        &self.scaler.feature_names
    }

    /// Forward pass over every stride-1 window of a scaled `[T x n]` series,
    /// merged back to `[T x n]` by overlap averaging.
    pub fn forward_series(&self, scaled: &Tensor) -> Result<Tensor> {
        let t = scaled.rows();
        let l = self.net.seq_len;
        if t < l {
            return Err(Error::SeriesTooShort { len: t, needed: l });
        }
        let steps = (0..l)
            .map(|s| scaled.slice_rows(s, t - l + 1))
            .collect::<Result<Vec<_>>>()?;
        let outputs = forward_batch(&self.net, &self.params, &steps)?;
        overlap_mean(&WindowBatch::from_steps(&outputs, t)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub dataset: usize,
    pub loss: f64,
}

/// Training losses in execution order, one record per parameter update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossHistory {
    pub records: Vec<LossRecord>,
}

impl LossHistory {
    /// Loss of one dataset over the epochs.
    pub fn curve(&self, dataset: usize) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.dataset == dataset)
            .map(|r| r.loss)
            .collect()
    }

    /// Dataset visiting order within one epoch.
    pub fn order(&self, epoch: usize) -> Vec<usize> {
        self.records
            .iter()
            .filter(|r| r.epoch == epoch)
            .map(|r| r.dataset)
            .collect()
    }
}

/// Order in which datasets are visited during `epoch`.
pub fn rotation(epoch: usize, count: usize) -> impl Iterator<Item = usize> {
    (0..count).map(move |k| (epoch + k) % count)
}

/// Full MSE of the autoencoder on one scaled series, on a fresh tape with
/// trainable parameters. Returns the loss and the parameter gradients in
/// `PARAM_NAMES` order.
fn loss_and_grads(net: &NetConfig, params: &AutoencoderParams, scaled: &Tensor) -> Result<(f64, Vec<Tensor>)> {
    let t = scaled.rows();
    let l = net.seq_len;
    let w = t + 1 - l;
    let mut tape = Tape::new();
    let vars = AutoencoderVars::register(&mut tape, params, true)?;
    let series = tape.constant(scaled.clone())?;
    let steps = (0..l)
        .map(|s| tape.slice_rows(series, s, w))
        .collect::<Result<Vec<_>>>()?;
    let trace = forward_steps(&mut tape, &vars, &steps)?;
    let output = tape.concat_rows(&trace.outputs)?;
    let target = tape.concat_rows(&steps)?;
    let loss = mse(&mut tape, output, target)?;
    let grads = tape.backward(loss)?;
    let per_param = vars
        .leaves
        .iter()
        .zip(params.tensors())
        .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
        .collect();
    Ok((tape.value(loss).item(), per_param))
}

pub fn train(datasets: &[TimeSeriesSet], config: &TrainConfig) -> Result<(TrainedModel, LossHistory)> {
    config.net.validate()?;
    if !(config.lr > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "learning rate must be > 0, got {}",
            config.lr
        )));
    }
    let scaler = fit_scaler(datasets)?;
    if scaler.feature_names.len() != config.net.n_features {
        return Err(Error::InvalidConfig(format!(
            "network expects {} features, data has {}",
            config.net.n_features,
            scaler.feature_names.len()
        )));
    }
    let scaled = datasets
        .iter()
        .map(|d| {
            if d.len() < config.net.seq_len {
                return Err(Error::SeriesTooShort {
                    len: d.len(),
                    needed: config.net.seq_len,
                });
            }
            Ok(transform(&scaler, d)?.values().clone())
        })
        .collect::<Result<Vec<_>>>()?;

    let mut params = AutoencoderParams::init(&config.net, config.seed)?;
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr))?;
    let mut history = LossHistory::default();
    let mut final_losses = vec![f64::NAN; datasets.len()];

    for epoch in 0..config.epochs {
        for d in rotation(epoch, datasets.len()) {
            let (loss, grads) = loss_and_grads(&config.net, &params, &scaled[d]).map_err(|e| match e {
                Error::NonFinite(_) => Error::Diverged { epoch },
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            let grad_refs: Vec<Option<&Tensor>> = grads.iter().map(Some).collect();
            adam.step(&mut params.tensors_mut(), &grad_refs)?;
            history.records.push(LossRecord {
                epoch,
                dataset: d,
                loss,
            });
            final_losses[d] = loss;
        }
        if epoch % 50 == 0 || epoch + 1 == config.epochs {
            debug!("epoch {epoch}: losses {final_losses:?}");
        }
    }

    let model = TrainedModel {
        net: config.net,
        params,
        scaler,
        metadata: TrainingMetadata {
            seed: config.seed,
            epochs: config.epochs,
            lr: config.lr,
            final_losses,
        },
    };
    Ok((model, history))
}

/// Reconstruction of a fully observed series by a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// `x̂` in data units, same length as the input.
    pub reconstruction: TimeSeriesSet,
    pub mse_scaled: Vec<f64>,
    pub mse_data: Vec<f64>,
}

pub fn evaluate_model(model: &TrainedModel, data: &TimeSeriesSet) -> Result<Evaluation> {
    data.check_features(model.feature_names())?;
    let scaled = transform(&model.scaler, data)?;
    let out_scaled = model.forward_series(scaled.values())?;
    let reconstruction = inverse_transform(&model.scaler, &data.with_values(out_scaled.clone())?)?;
    let n = data.n_features();
    let per_feature = |a: &Tensor, b: &Tensor| -> Vec<f64> {
        let mut acc = vec![0.0; n];
        for (ra, rb) in a.data().chunks_exact(n).zip(b.data().chunks_exact(n)) {
            for j in 0..n {
                acc[j] += (ra[j] - rb[j]).powi(2);
            }
        }
        acc.iter().map(|s| s / a.rows() as f64).collect()
    };
    Ok(Evaluation {
        mse_scaled: per_feature(&out_scaled, scaled.values()),
        mse_data: per_feature(reconstruction.values(), data.values()),
        reconstruction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_net() -> NetConfig {
        NetConfig {
            n_features: 2,
            seq_len: 3,
            lstm_hidden: 4,
            latent_dim: 1,
        }
    }

    fn ramp(len: usize, offset: f64) -> TimeSeriesSet {
        let a: Vec<f64> = (0..len).map(|i| offset + (i as f64 * 0.3).sin()).collect();
        let b: Vec<f64> = a.iter().map(|v| 2.0 * v - 1.0).collect();
        TimeSeriesSet::from_columns(vec!["a".into(), "b".into()], 0.0, 1.0, &[a, b]).unwrap()
    }

    #[test]
    fn rotation_shifts_start() {
        assert_eq!(rotation(0, 3).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(rotation(1, 3).collect::<Vec<_>>(), vec![1, 2, 0]);
        assert_eq!(rotation(5, 3).collect::<Vec<_>>(), vec![2, 0, 1]);
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let cfg = TrainConfig {
            epochs: 0,
            net: tiny_net(),
            seed: 5,
            ..TrainConfig::default()
        };
        let (model, history) = train(&[ramp(10, 0.0)], &cfg).unwrap();
        assert!(history.records.is_empty());
        assert!(model
            .params
            .bit_identical(&AutoencoderParams::init(&tiny_net(), 5).unwrap()));
    }

    #[test]
    fn history_shape_and_rotation() {
        let sets: Vec<_> = (0..3).map(|k| ramp(12, k as f64)).collect();
        let cfg = TrainConfig {
            epochs: 4,
            net: tiny_net(),
            ..TrainConfig::default()
        };
        let (_, history) = train(&sets, &cfg).unwrap();
        assert_eq!(history.records.len(), 4 * 3);
        for d in 0..3 {
            assert_eq!(history.curve(d).len(), 4);
        }
        let lasts: Vec<usize> = (0..3).map(|e| *history.order(e).last().unwrap()).collect();
        assert_eq!(lasts, vec![2, 0, 1]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = TrainConfig {
            epochs: 1,
            net: tiny_net(),
            ..TrainConfig::default()
        };
        let other =
            TimeSeriesSet::from_columns(vec!["a".into(), "c".into()], 0.0, 1.0, &[vec![0.0; 5], vec![1.0; 5]]).unwrap();
        assert!(matches!(
            train(&[ramp(8, 0.0), other], &cfg),
            Err(Error::FeatureMismatch { .. })
        ));
        assert!(train(&[ramp(2, 0.0)], &cfg).is_err());
        assert!(train(&[], &cfg).is_err());
        let bad_lr = TrainConfig { lr: 0.0, ..cfg };
        assert!(train(&[ramp(8, 0.0)], &bad_lr).is_err());
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let cfg = TrainConfig {
            epochs: 3,
            lr: 1e300,
            net: tiny_net(),
            ..TrainConfig::default()
        };
        match train(&[ramp(10, 0.0)], &cfg) {
            Err(Error::Diverged { epoch }) => assert!(epoch <= 2),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn training_is_reproducible() {
        let sets = vec![ramp(15, 0.0), ramp(15, 0.5)];
        let cfg = TrainConfig {
            epochs: 5,
            net: tiny_net(),
            seed: 17,
            ..TrainConfig::default()
        };
        let (a, ha) = train(&sets, &cfg).unwrap();
        let (b, hb) = train(&sets, &cfg).unwrap();
        assert!(a.params.bit_identical(&b.params));
        assert_eq!(ha, hb);
    }

    #[test]
    fn evaluation_output_length() {
        let sets = vec![ramp(20, 0.0)];
        let cfg = TrainConfig {
            epochs: 2,
            net: tiny_net(),
            ..TrainConfig::default()
        };
        let (model, _) = train(&sets, &cfg).unwrap();
        let ev = evaluate_model(&model, &sets[0]).unwrap();
        assert_eq!(ev.reconstruction.len(), 20);
        assert_eq!(ev.mse_scaled.len(), 2);
        let wrong =
            TimeSeriesSet::from_columns(vec!["b".into(), "a".into()], 0.0, 1.0, &[vec![0.0; 5], vec![0.0; 5]]).unwrap();
        assert!(evaluate_model(&model, &wrong).is_err());
    }
}
