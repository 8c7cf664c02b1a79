//! Error metrics and amplitude spectra.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::preprocess::TimeSeriesSet;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureReport {
    pub feature: String,
    pub mse: f64,
    pub rmse: f64,
    /// RMSE over the reference's population standard deviation.
    pub relative_rmse: f64,
}

/// Root mean square of `estimate - reference`.
pub fn rmse(reference: &[f64], estimate: &[f64]) -> f64 {
    mse(reference, estimate).sqrt()
}

pub fn mse(reference: &[f64], estimate: &[f64]) -> f64 {
    debug_assert_eq!(reference.len(), estimate.len());
    reference
        .iter()
        .zip(estimate)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.len() as f64
}

pub fn std_dev(x: &[f64]) -> f64 {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Time-domain report for one feature. A constant reference gives a
/// relative RMSE of 0 when matched exactly and infinity otherwise.
pub fn feature_report(feature: &str, reference: &[f64], estimate: &[f64]) -> Result<FeatureReport> {
    if reference.len() != estimate.len() || reference.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "`{feature}`: reference has {} samples, estimate {}",
            reference.len(),
            estimate.len()
        )));
    }
    let mse = mse(reference, estimate);
    let rmse = mse.sqrt();
    let sd = std_dev(reference);
    let relative_rmse = if sd > 0.0 {
        rmse / sd
    } else if rmse == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(FeatureReport {
        feature: feature.to_string(),
        mse,
        rmse,
        relative_rmse,
    })
}

/// Per-feature reports comparing `estimate` against `reference`; both sets
/// must carry the same features in the same order and equal lengths.
pub fn rmse_per_feature(reference: &TimeSeriesSet, estimate: &TimeSeriesSet) -> Result<Vec<FeatureReport>> {
    estimate.check_features(reference.feature_names())?;
    if reference.len() != estimate.len() {
        return Err(Error::InvalidConfig(format!(
            "length mismatch: {} vs {}",
            reference.len(),
            estimate.len()
        )));
    }
    reference
        .feature_names()
        .iter()
        .enumerate()
        .map(|(j, name)| feature_report(name, &reference.column(j), &estimate.column(j)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub frequency_hz: Vec<f64>,
    pub magnitude: Vec<f64>,
}

/// Complex DFT `X_k = sum_n x_n e^{-2πi kn/T}` for `k = 0..T`, by direct
/// summation. Twiddles are indexed by `kn mod T` to avoid large arguments.
pub fn dft(x: &[f64]) -> Vec<(f64, f64)> {
    let t = x.len();
    let twiddle: Vec<(f64, f64)> = (0..t)
        .map(|m| {
            let a = TAU * m as f64 / t as f64;
            (a.cos(), -a.sin())
        })
        .collect();
    (0..t)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, &v) in x.iter().enumerate() {
                let (c, s) = twiddle[(k * n) % t];
                re += v * c;
                im += v * s;
            }
            (re, im)
        })
        .collect()
}

/// One-sided amplitude spectrum with `floor(T/2) + 1` bins, scaled so a
/// sine of amplitude `A` on an exact bin reads `A` and a DC level reads
/// itself. No window function is applied.
pub fn amplitude_spectrum(series: &[f64], dt: f64) -> Result<Spectrum> {
    let t = series.len();
    if t < 2 {
        return Err(Error::SeriesTooShort { len: t, needed: 2 });
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!("sample interval must be > 0, got {dt}")));
    }
    let bins = t / 2 + 1;
    let full = dft(series);
    let magnitude = (0..bins)
        .map(|k| {
            let (re, im) = full[k];
            let abs = (re * re + im * im).sqrt() / t as f64;
            if k == 0 || (t % 2 == 0 && k == t / 2) {
                abs
            } else {
                2.0 * abs
            }
        })
        .collect();
    let frequency_hz = (0..bins).map(|k| k as f64 / (t as f64 * dt)).collect();
    Ok(Spectrum {
        frequency_hz,
        magnitude,
    })
}

/// Time-domain energy `sum x_n^2` recovered from a one-sided amplitude
/// spectrum of a length-`t` series (Parseval).
pub fn spectrum_energy(magnitude: &[f64], t: usize) -> f64 {
    let last = magnitude.len() - 1;
    let nyquist = t % 2 == 0;
    magnitude
        .iter()
        .enumerate()
        .map(|(k, a)| {
            if k == 0 || (nyquist && k == last) {
                a * a
            } else {
                a * a / 2.0
            }
        })
        .sum::<f64>()
        * t as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sets_have_zero_error() {
        let s = TimeSeriesSet::from_columns(
            vec!["a".into(), "b".into()],
            0.0,
            1.0,
            &[vec![1.0, 2.0, 4.0], vec![0.0, -1.0, 1.0]],
        )
        .unwrap();
        for r in rmse_per_feature(&s, &s).unwrap() {
            assert_eq!(r.rmse, 0.0);
            assert_eq!(r.relative_rmse, 0.0);
        }
    }

    #[test]
    fn constant_offset_gives_unit_rmse() {
        let a = TimeSeriesSet::from_columns(
            vec!["a".into(), "b".into()],
            0.0,
            1.0,
            &[vec![1.0, 2.0, 4.0], vec![0.0, -1.0, 1.0]],
        )
        .unwrap();
        let b = TimeSeriesSet::from_columns(
            vec!["a".into(), "b".into()],
            0.0,
            1.0,
            &[vec![2.0, 3.0, 5.0], vec![0.0, -1.0, 1.0]],
        )
        .unwrap();
        let r = rmse_per_feature(&a, &b).unwrap();
        assert!((r[0].rmse - 1.0).abs() < 1e-15);
        assert_eq!(r[1].rmse, 0.0);
    }

    #[test]
    fn zero_prediction_of_standardized_feature() {
        let truth = vec![1.0, -1.0, 1.0, -1.0];
        let r = feature_report("x", &truth, &[0.0; 4]).unwrap();
        assert_eq!(r.relative_rmse, 1.0);
        assert!(feature_report("x", &truth, &[0.0; 3]).is_err());
    }

    #[test]
    fn pure_sine_peak() {
        let t = 64;
        let dt = 1e-3;
        let f_bin = 5;
        let x: Vec<f64> = (0..t)
            .map(|n| 2.0 * (TAU * f_bin as f64 * n as f64 / t as f64).sin())
            .collect();
        let s = amplitude_spectrum(&x, dt).unwrap();
        assert_eq!(s.magnitude.len(), t / 2 + 1);
        assert!((s.magnitude[f_bin] - 2.0).abs() < 1e-9);
        assert!((s.frequency_hz[f_bin] - f_bin as f64 / (t as f64 * dt)).abs() < 1e-9);
        let others = s
            .magnitude
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != f_bin)
            .map(|(_, m)| *m);
        assert!(others.fold(0.0, f64::max) < 1e-9);
    }

    #[test]
    fn dc_level() {
        let s = amplitude_spectrum(&[3.0; 10], 1.0).unwrap();
        assert!((s.magnitude[0] - 3.0).abs() < 1e-12);
        assert!(amplitude_spectrum(&[1.0], 1.0).is_err());
    }
}
