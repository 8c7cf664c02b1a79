//! Reconstruction of completely missing features through a frozen
//! autoencoder.
//!
//! The trained parameters are placed on the tape as untracked constants. Each
//! missing feature becomes one `[T x 1]` leaf in scaled space, shared by every
//! window that covers a sample, so gradients from overlapping windows add up
//! into a single consistent series. The loss only sees available features:
//!
//! ```text
//! L_red = sum over available k of w_k * mean((x̂_k - x_k)^2)
//! ```
//!
//! and Adam minimizes it over the missing leaves, one step per epoch.
//! Afterwards one more forward pass of the completed series yields `x̂_miss`,
//! the reported result; the raw optimized input `x_miss` is returned too.

use std::collections::{BTreeMap, HashSet};

use log::debug;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{forward_steps, AutoencoderVars};
use crate::optim::{reduce_columns, reduced_loss, Adam, AdamConfig};
use crate::preprocess::TimeSeriesSet;
use crate::tensor::Tensor;
use crate::training::TrainedModel;

/// Starting point of the missing series, in scaled units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitMode {
    Zeros,
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionSpec {
    pub missing: Vec<String>,
    pub epochs: usize,
    pub lr: f64,
    pub init: InitMode,
    /// Loss weight per available feature; absent features weigh 1.
    pub weights: BTreeMap<String, f64>,
}

impl ReconstructionSpec {
    /// Default settings for the given missing features: zero init, learning
    /// rate 0.005, 300 epochs for one missing feature and 3000 for more.
    pub fn new(missing: Vec<String>) -> Self {
        let epochs = Self::default_epochs(missing.len());
        Self {
            missing,
            epochs,
            lr: 0.005,
            init: InitMode::Zeros,
            weights: BTreeMap::new(),
        }
    }

    pub fn default_epochs(missing: usize) -> usize {
        if missing <= 1 {
            300
        } else {
            3000
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    pub missing: Vec<String>,
    pub t0: f64,
    pub dt: f64,
    /// Optimized inputs per missing feature, data units.
    pub x_miss: Vec<Vec<f64>>,
    /// Forward-refined outputs per missing feature, data units.
    pub x_hat_miss: Vec<Vec<f64>>,
    /// `L_red` before each update.
    pub loss_history: Vec<f64>,
    pub initial_loss: f64,
    /// `L_red` at the final `x_miss`.
    pub final_loss: f64,
}

/// Step `t` of every stride-1 window of `series` (`[T x n]`) as a
/// `[T - seq_len + 1 x n]` row slice. Gradients flowing back through the
/// slices accumulate per sample.
pub fn gather_windows(tape: &mut Tape, series: Var, seq_len: usize) -> Result<Vec<Var>> {
    let t = tape.value(series).rows();
    if t < seq_len {
        return Err(Error::SeriesTooShort {
            len: t,
            needed: seq_len,
        });
    }
    (0..seq_len)
        .map(|s| tape.slice_rows(series, s, t - seq_len + 1))
        .collect()
}

/// The reduced-loss objective for one application dataset.
#[derive(Debug, Clone)]
pub struct ReducedProblem<'a> {
    model: &'a TrainedModel,
    /// `[T x n]` scaled; missing columns hold whatever the caller supplied
    /// (zeros when absent) and never reach the loss.
    target: Tensor,
    missing: Vec<usize>,
    available: Vec<usize>,
    weights: Vec<f64>,
}

impl<'a> ReducedProblem<'a> {
    /// Validates `spec` against the model and scales the available columns.
    /// `data` must contain every available feature; missing features may be
    /// absent.
    pub fn new(model: &'a TrainedModel, data: &TimeSeriesSet, spec: &ReconstructionSpec) -> Result<Self> {
        let names = model.feature_names();
        let n = names.len();
        if spec.missing.is_empty() {
            return Err(Error::InvalidConfig("no missing feature given".into()));
        }
        let mut seen = HashSet::new();
        let mut missing = Vec::with_capacity(spec.missing.len());
        for name in &spec.missing {
            let j = model.scaler.feature_index(name)?;
            if !seen.insert(j) {
                return Err(Error::InvalidConfig(format!("feature `{name}` listed twice")));
            }
            missing.push(j);
        }
        if missing.len() >= n {
            return Err(Error::InvalidConfig(
                "at least one feature must remain available".into(),
            ));
        }
        for name in spec.weights.keys() {
            let j = model.scaler.feature_index(name)?;
            if missing.contains(&j) {
                return Err(Error::InvalidConfig(format!(
                    "weight given for missing feature `{name}`"
                )));
            }
        }
        let available: Vec<usize> = (0..n).filter(|j| !missing.contains(j)).collect();
        let weights = available
            .iter()
            .map(|&j| spec.weights.get(&names[j]).copied().unwrap_or(1.0))
            .collect();

        let t = data.len();
        if t < model.net.seq_len {
            return Err(Error::SeriesTooShort {
                len: t,
                needed: model.net.seq_len,
            });
        }
        let mut target = Tensor::zeros(&[t, n]);
        for j in 0..n {
            let column = match data.feature_index(&names[j]) {
                Ok(src) => data.column(src),
                Err(e) if !missing.contains(&j) => return Err(e),
                Err(_) => continue,
            };
            for (i, v) in column.into_iter().enumerate() {
                target.data_mut()[i * n + j] = model.scaler.scale(j, v);
            }
        }
        if !target.is_finite() {
            return Err(Error::NonFinite("application data"));
        }
        Ok(Self {
            model,
            target,
            missing,
            available,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.target.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn missing(&self) -> &[usize] {
        &self.missing
    }

    pub fn available(&self) -> &[usize] {
        &self.available
    }

    /// The scaled series with the given missing columns filled in.
    pub fn complete(&self, x_miss: &[Tensor]) -> Result<Tensor> {
        self.check_leaves(x_miss.iter().map(Tensor::shape))?;
        let n = self.target.cols();
        let mut out = self.target.clone();
        for (col, &j) in x_miss.iter().zip(&self.missing) {
            for (i, &v) in col.data().iter().enumerate() {
                out.data_mut()[i * n + j] = v;
            }
        }
        Ok(out)
    }

    fn check_leaves<'s>(&self, shapes: impl Iterator<Item = &'s [usize]>) -> Result<()> {
        let t = self.len();
        let shapes: Vec<&[usize]> = shapes.collect();
        if shapes.len() != self.missing.len() {
            return Err(Error::InvalidConfig(format!(
                "{} missing features, got {} series",
                self.missing.len(),
                shapes.len()
            )));
        }
        for s in shapes {
            if s != [t, 1] {
                return Err(Error::ShapeMismatch {
                    op: "reconstruct",
                    lhs: vec![t, 1],
                    rhs: s.to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Records `L_red` on `tape` given one `[T x 1]` var per missing feature.
    /// Parameters go on the tape as untracked constants.
    pub fn build_loss(&self, tape: &mut Tape, x_miss: &[Var]) -> Result<Var> {
        self.check_leaves(x_miss.iter().map(|&v| tape.shape(v)))?;
        let n = self.target.cols();
        let l = self.model.net.seq_len;
        let net = AutoencoderVars::register(tape, &self.model.params, false)?;
        let target = tape.constant(self.target.clone())?;

        let mut columns = Vec::with_capacity(n);
        for j in 0..n {
            match self.missing.iter().position(|&m| m == j) {
                Some(k) => columns.push(x_miss[k]),
                None => columns.push(tape.slice_cols(target, j, 1)?),
            }
        }
        let series = tape.concat_cols(&columns)?;
        let steps = gather_windows(tape, series, l)?;
        let trace = forward_steps(tape, &net, &steps)?;
        let output = tape.concat_rows(&trace.outputs)?;

        let target_steps = gather_windows(tape, target, l)?;
        let target_windows = tape.concat_rows(&target_steps)?;
        let x_red = reduce_columns(tape, target_windows, &self.available)?;
        let x_hat_red = reduce_columns(tape, output, &self.available)?;
        reduced_loss(tape, &x_red, &x_hat_red, &self.weights)
    }

    pub fn loss(&self, x_miss: &[Tensor]) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = x_miss
            .iter()
            .map(|x| tape.constant(x.clone()))
            .collect::<Result<Vec<_>>>()?;
        let loss = self.build_loss(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    }

    /// `L_red` and `∂L_red/∂x_miss` for each missing feature.
    pub fn loss_and_grads(&self, x_miss: &[Tensor]) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let vars = x_miss
            .iter()
            .map(|x| tape.leaf(x.clone(), true))
            .collect::<Result<Vec<_>>>()?;
        let loss = self.build_loss(&mut tape, &vars)?;
        let grads = tape.backward(loss)?;
        let per_leaf = vars
            .iter()
            .zip(x_miss)
            .map(|(&v, x)| grads.get_or_zeros(v, x.shape()))
            .collect();
        Ok((tape.value(loss).item(), per_leaf))
    }

    /// One forward pass over the completed series; returns the missing
    /// columns of `x̂` in scaled units.
    pub fn refine_scaled(&self, x_miss: &[Tensor]) -> Result<Vec<Vec<f64>>> {
        let full = self.complete(x_miss)?;
        let out = self.model.forward_series(&full)?;
        let n = out.cols();
        Ok(self
            .missing
            .iter()
            .map(|&j| out.data().iter().skip(j).step_by(n).copied().collect())
            .collect())
    }

    fn unscale(&self, k: usize, values: &[f64]) -> Vec<f64> {
        let j = self.missing[k];
        values.iter().map(|&v| self.model.scaler.unscale(j, v)).collect()
    }
}

pub fn reconstruct(
    model: &TrainedModel,
    data: &TimeSeriesSet,
    spec: &ReconstructionSpec,
) -> Result<ReconstructionResult> {
    if spec.epochs == 0 {
        return Err(Error::InvalidConfig("epochs must be >= 1".into()));
    }
    let problem = ReducedProblem::new(model, data, spec)?;
    let t = problem.len();
    let init = match spec.init {
        InitMode::Zeros => 0.0,
        InitMode::Constant(c) => c,
    };
    let mut x_miss: Vec<Tensor> = problem.missing().iter().map(|_| Tensor::full(&[t, 1], init)).collect();
    let mut adam = Adam::new(AdamConfig::with_lr(spec.lr))?;
    let mut loss_history = Vec::with_capacity(spec.epochs);

    for epoch in 0..spec.epochs {
        let (loss, grads) = problem.loss_and_grads(&x_miss).map_err(|e| match e {
            Error::NonFinite(_) => Error::Diverged { epoch },
            other => other,
        })?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        loss_history.push(loss);
        let grad_refs: Vec<Option<&Tensor>> = grads.iter().map(Some).collect();
        let mut targets: Vec<&mut Tensor> = x_miss.iter_mut().collect();
        adam.step(&mut targets, &grad_refs)?;
        if epoch % 100 == 0 {
            debug!("reconstruction epoch {epoch}: L_red {loss:.6e}");
        }
    }

    let final_loss = problem.loss(&x_miss).map_err(|e| match e {
        Error::NonFinite(_) => Error::Diverged { epoch: spec.epochs },
        other => other,
    })?;
    let refined = problem.refine_scaled(&x_miss)?;
    let names = model.feature_names();
    Ok(ReconstructionResult {
        missing: problem.missing().iter().map(|&j| names[j].clone()).collect(),
        t0: data.t0(),
        dt: data.dt(),
        x_miss: x_miss
            .iter()
            .enumerate()
            .map(|(k, x)| problem.unscale(k, x.data()))
            .collect(),
        x_hat_miss: refined.iter().enumerate().map(|(k, x)| problem.unscale(k, x)).collect(),
        initial_loss: loss_history[0],
        loss_history,
        final_loss,
    })
}

/// Forward-refines an already completed series (data units, all features)
/// and returns `x̂` for the named features in data units.
pub fn refine(model: &TrainedModel, full: &TimeSeriesSet, features: &[String]) -> Result<Vec<Vec<f64>>> {
    full.check_features(model.feature_names())?;
    let scaled = crate::preprocess::transform(&model.scaler, full)?;
    let out = model.forward_series(scaled.values())?;
    let n = out.cols();
    features
        .iter()
        .map(|name| {
            let j = model.scaler.feature_index(name)?;
            Ok(out
                .data()
                .iter()
                .skip(j)
                .step_by(n)
                .map(|&v| model.scaler.unscale(j, v))
                .collect())
        })
        .collect()
}
