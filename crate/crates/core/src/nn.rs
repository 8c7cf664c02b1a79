//! The hourglass LSTM autoencoder.
//!
//! Per window of `seq_len` steps: encoder LSTM -> per-step `tanh(linear)`
//! latent -> decoder LSTM -> per-step linear output (no activation). Both
//! LSTMs start every window from zero hidden and cell state.
//!
//! All windows of a series are evaluated as one batch: step `t` of every
//! window is a `[windows x features]` matrix, so each LSTM step is a single
//! matrix product on the tape.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub n_features: usize,
    pub seq_len: usize,
    pub lstm_hidden: usize,
    pub latent_dim: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            n_features: 4,
            seq_len: 3,
            lstm_hidden: 16,
            latent_dim: 2,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_features < 2 {
            return Err(Error::InvalidConfig("n_features must be >= 2".into()));
        }
        if self.seq_len == 0 || self.lstm_hidden == 0 || self.latent_dim == 0 {
            return Err(Error::InvalidConfig(
                "seq_len, lstm_hidden and latent_dim must be >= 1".into(),
            ));
        }
        if self.latent_dim >= self.lstm_hidden {
            return Err(Error::InvalidConfig(format!(
                "latent_dim {} must be smaller than lstm_hidden {}",
                self.latent_dim, self.lstm_hidden
            )));
        }
        Ok(())
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        let (n, h, z) = (self.n_features, self.lstm_hidden, self.latent_dim);
        let lstm = |inp: usize| 4 * h * (inp + h + 1);
        lstm(n) + (z * h + z) + lstm(z) + (n * h + n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    /// `[out x in]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

/// Gate blocks are stacked in the order input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    /// `[4h x in]`
    pub w_ih: Tensor,
    /// `[4h x h]`
    pub w_hh: Tensor,
    /// `[4h]`
    pub bias: Tensor,
}

impl LstmParams {
    pub fn hidden(&self) -> usize {
        self.w_hh.cols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderParams {
    pub encoder_lstm: LstmParams,
    pub latent_linear: LinearParams,
    pub decoder_lstm: LstmParams,
    pub output_linear: LinearParams,
}

/// Names of the parameter tensors, in the order of
/// [`AutoencoderParams::tensors`].
pub const PARAM_NAMES: [&str; 10] = [
    "encoder_lstm.w_ih",
    "encoder_lstm.w_hh",
    "encoder_lstm.bias",
    "latent_linear.weight",
    "latent_linear.bias",
    "decoder_lstm.w_ih",
    "decoder_lstm.w_hh",
    "decoder_lstm.bias",
    "output_linear.weight",
    "output_linear.bias",
];

/// Uniform draws in `[-bound, bound)` from Xoshiro256++ (seeded through
/// SplitMix64): `u = (next_u64 >> 11) * 2^-53`, value `bound * (2u - 1)`.
struct UniformInit(Xoshiro256PlusPlus);

impl UniformInit {
    fn matrix(&mut self, rows: usize, cols: usize) -> Tensor {
        let bound = 1.0 / (cols as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| {
                let u = (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
                bound * (2.0 * u - 1.0)
            })
            .collect();
        Tensor::from_matrix(rows, cols, data).expect("nonzero dims")
    }

    fn lstm(&mut self, input: usize, hidden: usize) -> LstmParams {
        LstmParams {
            w_ih: self.matrix(4 * hidden, input),
            w_hh: self.matrix(4 * hidden, hidden),
            bias: Tensor::zeros(&[4 * hidden]),
        }
    }
}

impl AutoencoderParams {
    /// Weights uniform in `±1/sqrt(fan_in)` where fan-in is the weight
    /// matrix's column count; biases zero. Same seed, same parameters.
    pub fn init(config: &NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (n, h, z) = (config.n_features, config.lstm_hidden, config.latent_dim);
        let mut rng = UniformInit(Xoshiro256PlusPlus::seed_from_u64(seed));
        let encoder_lstm = rng.lstm(n, h);
        let latent_weight = rng.matrix(z, h);
        let decoder_lstm = rng.lstm(z, h);
        let output_weight = rng.matrix(n, h);
        Ok(Self {
            encoder_lstm,
            latent_linear: LinearParams {
                weight: latent_weight,
                bias: Tensor::zeros(&[z]),
            },
            decoder_lstm,
            output_linear: LinearParams {
                weight: output_weight,
                bias: Tensor::zeros(&[n]),
            },
        })
    }

    /// All-zero parameters of the right shapes.
    pub fn zeros(config: &NetConfig) -> Result<Self> {
        let mut p = Self::init(config, 0)?;
        for t in p.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        Ok(p)
    }

    pub fn tensors(&self) -> [&Tensor; 10] {
        [
            &self.encoder_lstm.w_ih,
            &self.encoder_lstm.w_hh,
            &self.encoder_lstm.bias,
            &self.latent_linear.weight,
            &self.latent_linear.bias,
            &self.decoder_lstm.w_ih,
            &self.decoder_lstm.w_hh,
            &self.decoder_lstm.bias,
            &self.output_linear.weight,
            &self.output_linear.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 10] {
        [
            &mut self.encoder_lstm.w_ih,
            &mut self.encoder_lstm.w_hh,
            &mut self.encoder_lstm.bias,
            &mut self.latent_linear.weight,
            &mut self.latent_linear.bias,
            &mut self.decoder_lstm.w_ih,
            &mut self.decoder_lstm.w_hh,
            &mut self.decoder_lstm.bias,
            &mut self.output_linear.weight,
            &mut self.output_linear.bias,
        ]
    }

    /// Rebuilds parameters from tensors in [`PARAM_NAMES`] order, checking
    /// every shape against `config`.
    pub fn from_tensors(config: &NetConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let template = Self::init(config, 0)?;
        if tensors.len() != PARAM_NAMES.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} parameter tensors, got {}",
                PARAM_NAMES.len(),
                tensors.len()
            )));
        }
        for ((name, expected), got) in PARAM_NAMES.iter().zip(template.tensors()).zip(&tensors) {
            if expected.shape() != got.shape() {
                return Err(Error::InvalidConfig(format!(
                    "{name}: expected shape {:?}, got {:?}",
                    expected.shape(),
                    got.shape()
                )));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked");
        Ok(Self {
            encoder_lstm: LstmParams {
                w_ih: next(),
                w_hh: next(),
                bias: next(),
            },
            latent_linear: LinearParams {
                weight: next(),
                bias: next(),
            },
            decoder_lstm: LstmParams {
                w_ih: next(),
                w_hh: next(),
                bias: next(),
            },
            output_linear: LinearParams {
                weight: next(),
                bias: next(),
            },
        })
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_identical(&self, other: &Self) -> bool {
        self.tensors().iter().zip(other.tensors()).all(|(a, b)| {
            a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        })
    }
}

/// An LSTM's parameters placed on a tape, weights pre-transposed for
/// row-batch products.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    w_ih_t: Var,
    w_hh_t: Var,
    bias: Var,
    hidden: usize,
}

impl LstmVars {
    /// Wires up `[4h x in]`, `[4h x h]` and `[4h]` leaves.
    pub fn from_leaves(tape: &mut Tape, w_ih: Var, w_hh: Var, bias: Var) -> Result<Self> {
        let hidden = tape.shape(w_hh).get(1).copied().unwrap_or(0);
        Ok(Self {
            w_ih_t: tape.transpose(w_ih)?,
            w_hh_t: tape.transpose(w_hh)?,
            bias,
            hidden,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    weight_t: Var,
    bias: Var,
}

/// Autoencoder parameters registered on a tape.
#[derive(Debug, Clone)]
pub struct AutoencoderVars {
    pub encoder: LstmVars,
    pub latent: LinearVars,
    pub decoder: LstmVars,
    pub output: LinearVars,
    /// The leaves, in [`PARAM_NAMES`] order.
    pub leaves: Vec<Var>,
}

impl AutoencoderVars {
    /// Places `params` on the tape. With `trainable == false` the parameters
    /// are untracked constants and no gradient is ever formed for them.
    pub fn register(tape: &mut Tape, params: &AutoencoderParams, trainable: bool) -> Result<Self> {
        let leaves = params
            .tensors()
            .iter()
            .map(|t| tape.leaf((*t).clone(), trainable))
            .collect::<Result<Vec<_>>>()?;
        Self::from_leaves(tape, leaves, params.encoder_lstm.hidden())
    }

    /// Wires up existing leaves given in [`PARAM_NAMES`] order.
    pub fn from_leaves(tape: &mut Tape, leaves: Vec<Var>, hidden: usize) -> Result<Self> {
        if leaves.len() != PARAM_NAMES.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} parameter leaves, got {}",
                PARAM_NAMES.len(),
                leaves.len()
            )));
        }
        let lstm = |tape: &mut Tape, base: usize| -> Result<LstmVars> {
            let vars = LstmVars::from_leaves(tape, leaves[base], leaves[base + 1], leaves[base + 2])?;
            if vars.hidden != hidden {
                return Err(Error::InvalidConfig(format!(
                    "LSTM hidden width {} differs from {hidden}",
                    vars.hidden
                )));
            }
            Ok(vars)
        };
        let linear = |tape: &mut Tape, base: usize| -> Result<LinearVars> {
            Ok(LinearVars {
                weight_t: tape.transpose(leaves[base])?,
                bias: leaves[base + 1],
            })
        };
        Ok(Self {
            encoder: lstm(tape, 0)?,
            latent: linear(tape, 3)?,
            decoder: lstm(tape, 5)?,
            output: linear(tape, 8)?,
            leaves,
        })
    }
}

fn linear(tape: &mut Tape, p: LinearVars, x: Var) -> Result<Var> {
    let y = tape.matmul(x, p.weight_t)?;
    tape.add_row(y, p.bias)
}

/// One LSTM cell update for a batch of rows:
///
/// ```text
/// i = σ(W_i x + U_i h + b_i)   f = σ(W_f x + U_f h + b_f)
/// g = tanh(W_g x + U_g h + b_g) o = σ(W_o x + U_o h + b_o)
/// c' = f ⊙ c + i ⊙ g            h' = o ⊙ tanh(c')
/// ```
pub fn lstm_step(tape: &mut Tape, p: LstmVars, x: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
    let hsz = p.hidden;
    let zx = tape.matmul(x, p.w_ih_t)?;
    let zh = tape.matmul(h_prev, p.w_hh_t)?;
    let z = tape.add(zx, zh)?;
    let z = tape.add_row(z, p.bias)?;
    let i = tape.slice_cols(z, 0, hsz)?;
    let i = tape.sigmoid(i)?;
    let f = tape.slice_cols(z, hsz, hsz)?;
    let f = tape.sigmoid(f)?;
    let g = tape.slice_cols(z, 2 * hsz, hsz)?;
    let g = tape.tanh(g)?;
    let o = tape.slice_cols(z, 3 * hsz, hsz)?;
    let o = tape.sigmoid(o)?;
    let fc = tape.mul(f, c_prev)?;
    let ig = tape.mul(i, g)?;
    let c = tape.add(fc, ig)?;
    let tc = tape.tanh(c)?;
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// Runs `inputs` (one `[batch x in]` var per step) from zero state and
/// returns the hidden state after every step.
pub fn lstm_sequence(tape: &mut Tape, p: LstmVars, inputs: &[Var]) -> Result<Vec<Var>> {
    let batch = tape.value(inputs[0]).rows();
    let zero = tape.constant(Tensor::zeros(&[batch, p.hidden]))?;
    let (mut h, mut c) = (zero, zero);
    let mut out = Vec::with_capacity(inputs.len());
    for &x in inputs {
        (h, c) = lstm_step(tape, p, x, h, c)?;
        out.push(h);
    }
    Ok(out)
}

/// Per-step results of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `[batch x n_features]` per step.
    pub outputs: Vec<Var>,
    /// `[batch x latent_dim]` per step, after the tanh.
    pub latents: Vec<Var>,
}

/// Batched forward: `steps[t]` holds step `t` of every window as a
/// `[batch x n_features]` matrix.
pub fn forward_steps(tape: &mut Tape, net: &AutoencoderVars, steps: &[Var]) -> Result<ForwardTrace> {
    if steps.is_empty() {
        return Err(Error::InvalidConfig("empty window sequence".into()));
    }
    let encoded = lstm_sequence(tape, net.encoder, steps)?;
    let latents = encoded
        .iter()
        .map(|&h| {
            let z = linear(tape, net.latent, h)?;
            tape.tanh(z)
        })
        .collect::<Result<Vec<_>>>()?;
    let decoded = lstm_sequence(tape, net.decoder, &latents)?;
    let outputs = decoded
        .iter()
        .map(|&h| linear(tape, net.output, h))
        .collect::<Result<Vec<_>>>()?;
    Ok(ForwardTrace { outputs, latents })
}

fn check_step_shapes(config: &NetConfig, steps: &[Tensor]) -> Result<()> {
    if steps.len() != config.seq_len {
        return Err(Error::ShapeMismatch {
            op: "autoencoder_forward",
            lhs: vec![config.seq_len, config.n_features],
            rhs: vec![steps.len()],
        });
    }
    let batch = steps[0].rows();
    for s in steps {
        if s.dims2()? != (batch, config.n_features) {
            return Err(Error::ShapeMismatch {
                op: "autoencoder_forward",
                lhs: vec![batch, config.n_features],
                rhs: s.shape().to_vec(),
            });
        }
    }
    Ok(())
}

/// Forward of a batch of windows without gradient tracking. Returns one
/// `[batch x n_features]` output per step.
pub fn forward_batch(config: &NetConfig, params: &AutoencoderParams, steps: &[Tensor]) -> Result<Vec<Tensor>> {
    check_step_shapes(config, steps)?;
    let mut tape = Tape::new();
    let net = AutoencoderVars::register(&mut tape, params, false)?;
    let inputs = steps
        .iter()
        .map(|s| tape.constant(s.clone()))
        .collect::<Result<Vec<_>>>()?;
    let trace = forward_steps(&mut tape, &net, &inputs)?;
    Ok(trace.outputs.iter().map(|&v| tape.value(v).clone()).collect())
}

/// `x̂ = g(f(x))` for one `[seq_len x n_features]` window.
pub fn autoencoder_forward(config: &NetConfig, params: &AutoencoderParams, window: &Tensor) -> Result<Tensor> {
    let (rows, cols) = window.dims2()?;
    if rows != config.seq_len || cols != config.n_features {
        return Err(Error::ShapeMismatch {
            op: "autoencoder_forward",
            lhs: vec![config.seq_len, config.n_features],
            rhs: window.shape().to_vec(),
        });
    }
    let steps = (0..rows).map(|t| window.slice_rows(t, 1)).collect::<Result<Vec<_>>>()?;
    let outs = forward_batch(config, params, &steps)?;
    let refs: Vec<&Tensor> = outs.iter().collect();
    Tensor::concat_rows(&refs)
}
