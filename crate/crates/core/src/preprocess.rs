//! Time series containers, min-max scaling, and stride-1 windowing.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An equidistant multivariate series: `values` is `[T x n]`, one column
/// per named feature.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesSet {
    feature_names: Vec<String>,
    t0: f64,
    dt: f64,
    values: Tensor,
}

impl TimeSeriesSet {
    pub fn new(feature_names: Vec<String>, t0: f64, dt: f64, values: Tensor) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("sample interval must be > 0, got {dt}")));
        }
        let (_, cols) = values.dims2()?;
        if values.shape().len() != 2 || cols != feature_names.len() {
            return Err(Error::InvalidShape {
                shape: values.shape().to_vec(),
                reason: format!("expected {} feature columns", feature_names.len()),
            });
        }
        let mut seen = HashSet::new();
        if let Some(dup) = feature_names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::InvalidConfig(format!("duplicate feature name `{dup}`")));
        }
        Ok(Self {
            feature_names,
            t0,
            dt,
            values,
        })
    }

    /// Builds a set from per-feature columns of equal length.
    pub fn from_columns(feature_names: Vec<String>, t0: f64, dt: f64, columns: &[Vec<f64>]) -> Result<Self> {
        let tensors = columns
            .iter()
            .map(|c| Tensor::column(c.clone()))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor> = tensors.iter().collect();
        Self::new(feature_names, t0, dt, Tensor::concat_cols(&refs)?)
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    /// Number of samples `T`.
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.feature_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownFeature(name.to_string()))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        let n = self.n_features();
        self.values.data().iter().skip(j).step_by(n).copied().collect()
    }

    pub fn column_by_name(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.column(self.feature_index(name)?))
    }

    /// Same names and timing, new `[T x n]` values.
    pub fn with_values(&self, values: Tensor) -> Result<Self> {
        Self::new(self.feature_names.clone(), self.t0, self.dt, values)
    }

    /// The named features, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Self> {
        let columns = names
            .iter()
            .map(|n| self.column_by_name(n))
            .collect::<Result<Vec<_>>>()?;
        Self::from_columns(names.to_vec(), self.t0, self.dt, &columns)
    }

    pub fn check_features(&self, expected: &[String]) -> Result<()> {
        if self.feature_names != expected {
            return Err(Error::FeatureMismatch {
                expected: expected.to_vec(),
                actual: self.feature_names.clone(),
            });
        }
        Ok(())
    }
}

/// Per-feature min-max ranges.
///
/// A feature that is constant over the fitting data is flagged; it scales
/// to 0.5 everywhere and inverse-scales back to its constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub feature_names: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub constant: Vec<bool>,
}

impl ScalerParams {
    /// Maps `x` of feature `j` to `(x - min) / (max - min)`. Values outside
    /// the fitted range land outside `[0, 1]`; nothing is clipped.
    pub fn scale(&self, j: usize, x: f64) -> f64 {
        if self.constant[j] {
            0.5
        } else {
            (x - self.min[j]) / (self.max[j] - self.min[j])
        }
    }

    pub fn unscale(&self, j: usize, x: f64) -> f64 {
        if self.constant[j] {
            self.min[j]
        } else {
            x * (self.max[j] - self.min[j]) + self.min[j]
        }
    }

    pub fn range(&self, j: usize) -> f64 {
        self.max[j] - self.min[j]
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.feature_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownFeature(name.to_string()))
    }
}

/// Global per-feature extrema over all `data`.
pub fn fit_scaler(data: &[TimeSeriesSet]) -> Result<ScalerParams> {
    let first = data
        .first()
        .ok_or_else(|| Error::InvalidConfig("cannot fit a scaler on zero datasets".into()))?;
    let names = first.feature_names().to_vec();
    let n = names.len();
    let mut min = vec![f64::INFINITY; n];
    let mut max = vec![f64::NEG_INFINITY; n];
    for set in data {
        set.check_features(&names)?;
        for row in set.values().data().chunks_exact(n) {
            for j in 0..n {
                min[j] = min[j].min(row[j]);
                max[j] = max[j].max(row[j]);
            }
        }
    }
    let constant = min.iter().zip(&max).map(|(a, b)| a == b).collect();
    Ok(ScalerParams {
        feature_names: names,
        min,
        max,
        constant,
    })
}

fn map_columns(
    s: &ScalerParams,
    data: &TimeSeriesSet,
    f: impl Fn(&ScalerParams, usize, f64) -> f64,
) -> Result<TimeSeriesSet> {
    data.check_features(&s.feature_names)?;
    let n = data.n_features();
    let mut values = data.values().clone();
    for row in values.data_mut().chunks_exact_mut(n) {
        for (j, v) in row.iter_mut().enumerate() {
            *v = f(s, j, *v);
        }
    }
    data.with_values(values)
}

pub fn transform(s: &ScalerParams, data: &TimeSeriesSet) -> Result<TimeSeriesSet> {
    map_columns(s, data, ScalerParams::scale)
}

pub fn inverse_transform(s: &ScalerParams, data: &TimeSeriesSet) -> Result<TimeSeriesSet> {
    map_columns(s, data, ScalerParams::unscale)
}

/// Stride-1 windows over a series.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    /// `[num_windows x seq_len x n]`
    pub windows: Tensor,
    pub source_len: usize,
    pub stride: usize,
}

impl WindowBatch {
    pub fn num_windows(&self) -> usize {
        self.windows.shape()[0]
    }

    pub fn seq_len(&self) -> usize {
        self.windows.shape()[1]
    }

    pub fn n_features(&self) -> usize {
        self.windows.shape()[2]
    }

    /// Regroups by step: element `t` is `[num_windows x n]`, row `w` being
    /// step `t` of window `w`.
    pub fn to_steps(&self) -> Vec<Tensor> {
        let (w, l, n) = (self.num_windows(), self.seq_len(), self.n_features());
        let d = self.windows.data();
        (0..l)
            .map(|t| {
                let mut out = Vec::with_capacity(w * n);
                for k in 0..w {
                    out.extend_from_slice(&d[(k * l + t) * n..(k * l + t + 1) * n]);
                }
                Tensor::from_matrix(w, n, out).expect("nonzero dims")
            })
            .collect()
    }

    /// Inverse of [`WindowBatch::to_steps`].
    pub fn from_steps(steps: &[Tensor], source_len: usize) -> Result<Self> {
        let first = steps.first().ok_or_else(|| Error::InvalidConfig("no steps".into()))?;
        let (w, n) = first.dims2()?;
        let l = steps.len();
        if w + l - 1 != source_len {
            return Err(Error::InvalidConfig(format!(
                "{w} windows of length {l} cannot cover {source_len} samples"
            )));
        }
        let mut data = vec![0.0; w * l * n];
        for (t, s) in steps.iter().enumerate() {
            if s.dims2()? != (w, n) {
                return Err(Error::ShapeMismatch {
                    op: "from_steps",
                    lhs: first.shape().to_vec(),
                    rhs: s.shape().to_vec(),
                });
            }
            for k in 0..w {
                data[(k * l + t) * n..(k * l + t + 1) * n].copy_from_slice(&s.data()[k * n..(k + 1) * n]);
            }
        }
        Ok(Self {
            windows: Tensor::new(vec![w, l, n], data)?,
            source_len,
            stride: 1,
        })
    }
}

pub fn sliding_windows(data: &TimeSeriesSet, seq_len: usize) -> Result<WindowBatch> {
    let t = data.len();
    if seq_len == 0 || t < seq_len {
        return Err(Error::SeriesTooShort {
            len: t,
            needed: seq_len.max(1),
        });
    }
    let n = data.n_features();
    let w = t - seq_len + 1;
    let src = data.values().data();
    let mut out = Vec::with_capacity(w * seq_len * n);
    for k in 0..w {
        out.extend_from_slice(&src[k * n..(k + seq_len) * n]);
    }
    Ok(WindowBatch {
        windows: Tensor::new(vec![w, seq_len, n], out)?,
        source_len: t,
        stride: 1,
    })
}

/// Number of stride-1 windows of length `seq_len` that cover sample `i` of
/// a length-`t` series.
pub fn coverage(i: usize, seq_len: usize, t: usize) -> usize {
    let w = t + 1 - seq_len;
    let lo = i.saturating_sub(seq_len - 1);
    let hi = i.min(w - 1);
    hi + 1 - lo
}

fn check_batch(batch: &WindowBatch) -> Result<()> {
    if batch.windows.shape().len() != 3 || batch.num_windows() + batch.seq_len() - 1 != batch.source_len {
        return Err(Error::InvalidConfig(format!(
            "window tensor {:?} inconsistent with source length {}",
            batch.windows.shape(),
            batch.source_len
        )));
    }
    Ok(())
}

/// Merges overlapping window outputs: every sample is the mean of all
/// window cells covering it. Returns `[T x n]`.
pub fn overlap_mean(batch: &WindowBatch) -> Result<Tensor> {
    check_batch(batch)?;
    let (w, l, n) = (batch.num_windows(), batch.seq_len(), batch.n_features());
    let t = batch.source_len;
    // Incremental mean: agreeing windows reproduce their value bit-exactly.
    let mut acc = vec![0.0; t * n];
    let mut seen = vec![0usize; t];
    let d = batch.windows.data();
    for k in 0..w {
        for s in 0..l {
            let i = k + s;
            seen[i] += 1;
            let c = seen[i] as f64;
            for j in 0..n {
                let m = &mut acc[i * n + j];
                *m += (d[(k * l + s) * n + j] - *m) / c;
            }
        }
    }
    Tensor::from_matrix(t, n, acc)
}

/// Alternative merge: each sample is taken from the window in which it sits
/// closest to the middle position.
pub fn center_sample(batch: &WindowBatch) -> Result<Tensor> {
    check_batch(batch)?;
    let (w, l, n) = (batch.num_windows(), batch.seq_len(), batch.n_features());
    let t = batch.source_len;
    let d = batch.windows.data();
    let mut out = Vec::with_capacity(t * n);
    for i in 0..t {
        let k = i.saturating_sub(l / 2).min(w - 1);
        let s = i - k;
        out.extend_from_slice(&d[(k * l + s) * n..(k * l + s + 1) * n]);
    }
    Tensor::from_matrix(t, n, out)
}
