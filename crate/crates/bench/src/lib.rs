//! Shared fixtures for the criterion benches.

use autorecon_core::circuit::{generate_suite, SuiteConfig};
use autorecon_core::preprocess::{fit_scaler, transform};
use autorecon_core::training::TrainingMetadata;
use autorecon_core::{AutoencoderParams, NetConfig, TimeSeriesSet, TrainedModel};

pub const SEED: u64 = 7;

/// The bundled training sets with `len` samples each.
pub fn training_sets(len: usize) -> Vec<TimeSeriesSet> {
    let config = SuiteConfig {
        len,
        ..Default::default()
    };
    generate_suite(SEED, &config)
        .expect("default suite simulates")
        .train
        .into_iter()
        .map(|e| e.output.series)
        .collect()
}

/// Untrained model with the default network, scaled on the bundled suite.
pub fn untrained_model(sets: &[TimeSeriesSet]) -> TrainedModel {
    let net = NetConfig::default();
    TrainedModel {
        net,
        params: AutoencoderParams::init(&net, SEED).expect("default config is valid"),
        scaler: fit_scaler(sets).expect("suite has consistent features"),
        metadata: TrainingMetadata {
            seed: SEED,
            epochs: 0,
            lr: 0.0,
            final_losses: Vec::new(),
        },
    }
}

/// `sets[0]` in scaled units.
pub fn scaled_first(model: &TrainedModel, sets: &[TimeSeriesSet]) -> TimeSeriesSet {
    transform(&model.scaler, &sets[0]).expect("features match")
}
