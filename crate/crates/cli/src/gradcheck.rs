//! Finite-difference verification of every differentiable op, the
//! autoencoder, and the reconstruction gradient `∂L_red/∂x_miss`.

use autorecon_core::autodiff::{grad_check_many, OpKind, Tape, Var};
use autorecon_core::nn::{forward_steps, lstm_step, AutoencoderVars, LstmVars};
use autorecon_core::preprocess::fit_scaler;
use autorecon_core::reconstruct::{gather_windows, ReducedProblem};
use autorecon_core::training::TrainingMetadata;
use autorecon_core::{AutoencoderParams, NetConfig, ReconstructionSpec, Result, Tensor, TimeSeriesSet, TrainedModel};
use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub const TOLERANCE: f64 = 1e-5;
/// Finite-difference step for single ops and the reduced loss.
pub const STEP: f64 = 1e-6;
/// Step for checks through LSTM layers, where some gradient components
/// sit near 1e-6 of the loss; at step 1e-6 their differences drown in
/// rounding of the loss.
pub const NETWORK_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub step: f64,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.checks.iter().map(|c| c.max_relative_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.max_relative_error < TOLERANCE)
    }
}

struct Draw(Xoshiro256PlusPlus);

impl Draw {
    fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Roughly uniform on `[-1, 1]` with `|v| >= 0.05`, so products never
    /// produce near-zero gradient components whose relative error is noise.
    fn value(&mut self) -> f64 {
        let v = 2.0 * self.unit() - 1.0;
        if v.abs() < 0.05 {
            v.signum() * 0.05 + v
        } else {
            v
        }
    }

    fn tensor(&mut self, shape: &[usize]) -> Tensor {
        let len = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..len).map(|_| self.value()).collect()).expect("shape and length agree")
    }
}

/// Reduces an op output to a scalar through fixed random weights, so every
/// output element carries a distinct, nonzero sensitivity.
fn weighted_sum(tape: &mut Tape, y: Var, weights: &Tensor) -> Result<Var> {
    let w = tape.constant(weights.clone())?;
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

fn check_op(draw: &mut Draw, op: OpKind, shapes: &[&[usize]]) -> Result<Check> {
    let inputs: Vec<Tensor> = shapes.iter().map(|s| draw.tensor(s)).collect();
    let refs: Vec<&Tensor> = inputs.iter().collect();
    let out_shape = op.eval(&refs)?.shape().to_vec();
    let weights = draw.tensor(&out_shape);
    let scalar_out = out_shape == [1];
    let err = grad_check_many(
        |tape, vars| {
            let y = tape.apply(op.clone(), vars)?;
            if scalar_out {
                Ok(y)
            } else {
                weighted_sum(tape, y, &weights)
            }
        },
        &inputs,
        STEP,
    )?;
    Ok(Check {
        name: format!("op {}", op.name()),
        step: STEP,
        max_relative_error: err,
    })
}

fn op_suite(draw: &mut Draw) -> Result<Vec<Check>> {
    let cases: Vec<(OpKind, Vec<&[usize]>)> = vec![
        (OpKind::Add, vec![&[3, 4], &[3, 4]]),
        (OpKind::Sub, vec![&[3, 4], &[3, 4]]),
        (OpKind::Mul, vec![&[3, 4], &[3, 4]]),
        (OpKind::MatMul, vec![&[3, 4], &[4, 2]]),
        (OpKind::Scale(-1.7), vec![&[2, 5]]),
        (OpKind::Tanh, vec![&[3, 4]]),
        (OpKind::Sigmoid, vec![&[3, 4]]),
        (OpKind::AddRow, vec![&[3, 4], &[4]]),
        (OpKind::Transpose, vec![&[3, 4]]),
        (OpKind::ConcatRows, vec![&[2, 3], &[1, 3], &[3, 3]]),
        (OpKind::ConcatCols, vec![&[3, 2], &[3, 1]]),
        (OpKind::SliceRows { start: 1, count: 2 }, vec![&[4, 3]]),
        (OpKind::SliceCols { start: 1, width: 2 }, vec![&[3, 4]]),
        (OpKind::Sum, vec![&[2, 3]]),
        (OpKind::MeanSquaredDiff, vec![&[2, 3], &[2, 3]]),
    ];
    cases
        .into_iter()
        .map(|(op, shapes)| check_op(draw, op, &shapes))
        .collect()
}

/// Three chained LSTM steps of a two-row batch from random nonzero states:
/// gradient of a weighted sum of every hidden and cell state with respect
/// to the weights, bias, inputs and initial states.
fn lstm_check(draw: &mut Draw) -> Result<Check> {
    let (input, hidden, batch, steps) = (3, 4, 2, 3);
    let mut leaves = vec![
        draw.tensor(&[4 * hidden, input]).map(|v| 0.5 * v),
        draw.tensor(&[4 * hidden, hidden]).map(|v| 0.5 * v),
        draw.tensor(&[4 * hidden]).map(|v| 0.5 * v),
        draw.tensor(&[batch, hidden]),
        draw.tensor(&[batch, hidden]),
    ];
    leaves.extend((0..steps).map(|_| draw.tensor(&[batch, input])));
    let weights = draw.tensor(&[2 * steps * batch, hidden]);
    let err = grad_check_many(
        |tape, vars| {
            let lstm = LstmVars::from_leaves(tape, vars[0], vars[1], vars[2])?;
            let (mut h, mut c) = (vars[3], vars[4]);
            let mut states = Vec::with_capacity(2 * steps);
            for &x in &vars[5..] {
                (h, c) = lstm_step(tape, lstm, x, h, c)?;
                states.push(h);
                states.push(c);
            }
            let all = tape.concat_rows(&states)?;
            weighted_sum(tape, all, &weights)
        },
        &leaves,
        NETWORK_STEP,
    )?;
    Ok(Check {
        name: "lstm weights, bias, inputs and states".into(),
        step: NETWORK_STEP,
        max_relative_error: err,
    })
}

/// The full windowed autoencoder: gradient of a weighted sum of its output
/// with respect to the input series and both linear layers, the LSTMs held
/// as constants. Parameters are drawn at unit scale rather than the init
/// bounds so gradients stay well above rounding noise.
fn autoencoder_check(draw: &mut Draw) -> Result<Check> {
    let config = NetConfig {
        n_features: 3,
        seq_len: 3,
        lstm_hidden: 4,
        latent_dim: 2,
    };
    let (t, l) = (6, config.seq_len);
    let template = AutoencoderParams::zeros(&config)?;
    let params: Vec<Tensor> = template.tensors().iter().map(|p| draw.tensor(p.shape())).collect();
    let series = draw.tensor(&[t, config.n_features]);
    let weights = draw.tensor(&[(t - l + 1) * l, config.n_features]);
    // latent and output linear layers in parameter order
    const LINEAR: [usize; 4] = [3, 4, 8, 9];
    let mut leaves: Vec<Tensor> = LINEAR.iter().map(|&k| params[k].clone()).collect();
    leaves.push(series);
    let hidden = config.lstm_hidden;
    let err = grad_check_many(
        |tape, vars| {
            let mut all = Vec::with_capacity(params.len());
            for (k, p) in params.iter().enumerate() {
                match LINEAR.iter().position(|&j| j == k) {
                    Some(i) => all.push(vars[i]),
                    None => all.push(tape.constant(p.clone())?),
                }
            }
            let net = AutoencoderVars::from_leaves(tape, all, hidden)?;
            let steps = gather_windows(tape, vars[LINEAR.len()], l)?;
            let trace = forward_steps(tape, &net, &steps)?;
            let out = tape.concat_rows(&trace.outputs)?;
            weighted_sum(tape, out, &weights)
        },
        &leaves,
        NETWORK_STEP,
    )?;
    Ok(Check {
        name: "autoencoder input and linear layers".into(),
        step: NETWORK_STEP,
        max_relative_error: err,
    })
}

/// `∂L_red/∂x_miss` on a T = 10 toy problem with a random unit-scale frozen
/// model, for one and for two missing features.
fn reconstruction_checks(draw: &mut Draw, seed: u64) -> Result<Vec<Check>> {
    let config = NetConfig {
        n_features: 4,
        seq_len: 3,
        lstm_hidden: 5,
        latent_dim: 2,
    };
    let names: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
    let columns: Vec<Vec<f64>> = (0..4).map(|_| (0..10).map(|_| draw.value()).collect()).collect();
    let data = TimeSeriesSet::from_columns(names, 0.0, 1.0, &columns)?;
    let model = TrainedModel {
        net: config,
        params: AutoencoderParams::from_tensors(
            &config,
            AutoencoderParams::zeros(&config)?
                .tensors()
                .iter()
                .map(|p| draw.tensor(p.shape()))
                .collect(),
        )?,
        scaler: fit_scaler(std::slice::from_ref(&data))?,
        metadata: TrainingMetadata {
            seed,
            epochs: 0,
            lr: 0.0,
            final_losses: Vec::new(),
        },
    };
    let mut out = Vec::new();
    for missing in [vec!["b"], vec!["a", "c"]] {
        let mut spec = ReconstructionSpec::new(missing.iter().map(|s| s.to_string()).collect());
        if missing.len() == 1 {
            spec.weights.insert("d".into(), 2.5);
        }
        let problem = ReducedProblem::new(&model, &data, &spec)?;
        let x_miss: Vec<Tensor> = missing
            .iter()
            .map(|_| draw.tensor(&[10, 1]).map(|v| 0.5 + 0.5 * v))
            .collect();
        let err = grad_check_many(|tape, vars| problem.build_loss(tape, vars), &x_miss, NETWORK_STEP)?;
        out.push(Check {
            name: format!("reduced loss wrt x_miss [{}]", missing.join(",")),
            step: NETWORK_STEP,
            max_relative_error: err,
        });
    }
    Ok(out)
}

/// Runs the whole suite. Deterministic for a given seed.
pub fn run(seed: u64) -> Result<GradCheckReport> {
    let mut draw = Draw(Xoshiro256PlusPlus::seed_from_u64(seed));
    let mut checks = op_suite(&mut draw)?;
    checks.push(lstm_check(&mut draw)?);
    checks.push(autoencoder_check(&mut draw)?);
    checks.extend(reconstruction_checks(&mut draw, seed)?);
    Ok(GradCheckReport { seed, checks })
}
