//! Losses and the Adam optimizer.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean over all elements of `(a - b)^2`, as a scalar tape node.
pub fn mse(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::ShapeMismatch {
            op: "mse",
            lhs: tape.shape(a).to_vec(),
            rhs: tape.shape(b).to_vec(),
        });
    }
    tape.mean_squared_diff(a, b)
}

/// Splits `[rows x n]` into one `[rows x 1]` column per listed feature,
/// dropping every column not in `keep`.
pub fn reduce_columns(tape: &mut Tape, full: Var, keep: &[usize]) -> Result<Vec<Var>> {
    keep.iter().map(|&j| tape.slice_cols(full, j, 1)).collect()
}

/// `sum_k w_k * mse(x_k, x̂_k)` over the available features only.
///
/// Both slices hold one column per available feature, in the same order.
/// `weights` may be empty (all ones) or one weight per feature.
pub fn reduced_loss(tape: &mut Tape, x_red: &[Var], x_hat_red: &[Var], weights: &[f64]) -> Result<Var> {
    if x_red.is_empty() {
        return Err(Error::InvalidConfig(
            "reduced loss needs at least one available feature".into(),
        ));
    }
    if x_red.len() != x_hat_red.len() || !(weights.is_empty() || weights.len() == x_red.len()) {
        return Err(Error::InvalidConfig(format!(
            "reduced loss: {} targets, {} outputs, {} weights",
            x_red.len(),
            x_hat_red.len(),
            weights.len()
        )));
    }
    let mut total: Option<Var> = None;
    for (k, (&x, &x_hat)) in x_red.iter().zip(x_hat_red).enumerate() {
        let mut term = mse(tape, x_hat, x)?;
        if let Some(&w) = weights.get(k) {
            if w != 1.0 {
                term = tape.scale(term, w)?;
            }
        }
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok(total.expect("nonempty"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over a fixed list of target tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    steps: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        if !(config.lr > 0.0) || !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2) {
            return Err(Error::InvalidConfig(format!("invalid Adam settings {config:?}")));
        }
        Ok(Self {
            config,
            m: vec![],
            v: vec![],
            steps: 0,
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update of every target. `grads[k]` belongs to `targets[k]`; a
    /// `None` entry is an error.
    pub fn step(&mut self, targets: &mut [&mut Tensor], grads: &[Option<&Tensor>]) -> Result<()> {
        if grads.len() != targets.len() {
            return Err(Error::MissingGradient(grads.len().min(targets.len())));
        }
        if let Some(k) = grads.iter().position(Option::is_none) {
            return Err(Error::MissingGradient(k));
        }
        if self.m.is_empty() {
            self.m = targets.iter().map(|t| Tensor::zeros(t.shape())).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != targets.len() {
            return Err(Error::InvalidConfig(format!(
                "optimizer tracks {} targets, got {}",
                self.m.len(),
                targets.len()
            )));
        }
        for (k, (target, grad)) in targets.iter().zip(grads).enumerate() {
            let grad = grad.expect("checked");
            if target.len() != self.m[k].len() || grad.len() != target.len() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: target.shape().to_vec(),
                    rhs: grad.shape().to_vec(),
                });
            }
        }

        self.steps += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.steps as i32);
        let bc2 = 1.0 - beta2.powi(self.steps as i32);
        for ((target, grad), (m, v)) in targets
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let g = grad.expect("checked").data();
            for (((x, &gi), mi), vi) in target.data_mut().iter_mut().zip(g).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
