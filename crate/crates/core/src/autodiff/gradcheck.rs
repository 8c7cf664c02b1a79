//! Central finite-difference verification of tape gradients.
//!
//! The closure passed in must be pure: it is re-run on a fresh tape for
//! every probe, and any hidden state (RNG draws, counters) makes the
//! numerical side meaningless.

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `|a - n| / max(|a|, |n|, 1e-12)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Max relative error between the tape gradient of `f` at `x` and central
/// differences with step `eps` (allowed range `1e-8..=1e-4`).
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), eps)
}

/// [`grad_check`] over several leaves at once; the error is the max over
/// every component of every leaf.
pub fn grad_check_many<F>(f: F, xs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-8..=1e-4).contains(&eps) {
        return Err(Error::InvalidConfig(format!(
            "finite-difference step {eps} outside [1e-8, 1e-4]"
        )));
    }
    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = inputs
            .iter()
            .map(|x| tape.leaf(x.clone(), false))
            .collect::<Result<Vec<_>>>()?;
        let loss = f(&mut tape, &vars)?;
        scalar_of(&tape, loss)
    };

    let mut tape = Tape::new();
    let vars = xs
        .iter()
        .map(|x| tape.leaf(x.clone(), true))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut probe = xs.to_vec();
    let mut worst: f64 = 0.0;
    let mut worst_at = (0, 0, 0.0, 0.0);
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var, xs[k].shape());
        for i in 0..xs[k].len() {
            let orig = xs[k].data()[i];
            probe[k].data_mut()[i] = orig + eps;
            let plus = eval(&probe)?;
            probe[k].data_mut()[i] = orig - eps;
            let minus = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic.data()[i], numeric);
            if err > worst {
                worst = err;
                worst_at = (k, i, analytic.data()[i], numeric);
            }
        }
    }
    let (k, i, a, n) = worst_at;
    log::debug!("worst component: leaf {k} index {i}, analytic {a:e}, numeric {n:e}");
    Ok(worst)
}

fn scalar_of(tape: &Tape, v: Var) -> Result<f64> {
    let value = tape.value(v);
    if value.is_scalar() {
        Ok(value.item())
    } else {
        Err(Error::NonScalarLoss(value.shape().to_vec()))
    }
}
