//! Synthetic data from a nonlinear second-order filter.
//!
//! Topology: source `u1` -> series resistor `R1` -> inductor `L` -> output
//! node `u2`, with a voltage-dependent capacitor `C(u2)` and a load resistor
//! `Rload` from the node to ground. State `(i1, u2)`:
//!
//! ```text
//! di1/dt = (u1 - R1 i1 - u2) / L
//! du2/dt = (i1 - u2 / Rload) / C(u2)     C(u) = C0 / (1 + (u / V0)^2)
//! ```
//!
//! integrated with classical fixed-step RK4 from a zero state.

use std::f64::consts::TAU;

use log::warn;
use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::TimeSeriesSet;
use crate::tensor::Tensor;

/// Feature order of every simulated dataset.
pub const FEATURES: [&str; 4] = ["u1", "i1", "u2", "i2"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircuitParams {
    /// Ω
    pub r1: f64,
    /// H
    pub l: f64,
    /// F
    pub c0: f64,
    /// V
    pub v0: f64,
    /// Ω
    pub r_load: f64,
}

impl Default for CircuitParams {
    fn default() -> Self {
        Self {
            r1: 1.0,
            l: 1e-5,
            c0: 1e-6,
            v0: 5.0,
            r_load: 10.0,
        }
    }
}

impl CircuitParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.r1, self.l, self.c0, self.v0, self.r_load];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("circuit values must be > 0: {self:?}")))
        }
    }

    /// Shortest of the natural time scales at zero bias.
    fn time_scale(&self) -> f64 {
        (self.l * self.c0)
            .sqrt()
            .min(self.l / self.r1)
            .min(self.r_load * self.c0)
    }
}

pub fn capacitance(u: f64, p: &CircuitParams) -> f64 {
    let x = u / p.v0;
    p.c0 / (1.0 + x * x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WaveTerm {
    Dc {
        level: f64,
    },
    Sine {
        amplitude: f64,
        frequency: f64,
        phase: f64,
    },
    /// Periodic `low -> high` ramp, plateau, ramp back, then `low` for the
    /// rest of the period. Times in seconds.
    Trapezoid {
        low: f64,
        high: f64,
        rise: f64,
        high_time: f64,
        fall: f64,
        period: f64,
    },
}

impl WaveTerm {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            WaveTerm::Dc { level } => level,
            WaveTerm::Sine {
                amplitude,
                frequency,
                phase,
            } => amplitude * (TAU * frequency * t + phase).sin(),
            WaveTerm::Trapezoid {
                low,
                high,
                rise,
                high_time,
                fall,
                period,
            } => {
                let tau = t.rem_euclid(period);
                if tau < rise {
                    low + (high - low) * tau / rise
                } else if tau < rise + high_time {
                    high
                } else if tau < rise + high_time + fall {
                    high - (high - low) * (tau - rise - high_time) / fall
                } else {
                    low
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            WaveTerm::Dc { level } => level.is_finite(),
            WaveTerm::Sine {
                amplitude,
                frequency,
                phase,
            } => frequency > 0.0 && amplitude.is_finite() && phase.is_finite() && frequency.is_finite(),
            WaveTerm::Trapezoid {
                low,
                high,
                rise,
                high_time,
                fall,
                period,
            } => {
                low.is_finite()
                    && high.is_finite()
                    && rise > 0.0
                    && high_time > 0.0
                    && fall > 0.0
                    && rise + high_time + fall <= period
                    && period.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid waveform term {self:?}")))
        }
    }
}

/// Sum of terms.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WaveformSpec {
    pub terms: Vec<WaveTerm>,
}

impl WaveformSpec {
    pub fn new(terms: Vec<WaveTerm>) -> Self {
        Self { terms }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.terms.iter().map(|term| term.eval(t)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.terms.iter().try_for_each(WaveTerm::validate)
    }
}

/// A simulated dataset plus the capacitor-voltage slope the integrator
/// evaluated at each grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    /// Features `u1, i1, u2, i2`.
    pub series: TimeSeriesSet,
    pub du2_dt: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct State {
    i1: f64,
    u2: f64,
}

impl State {
    fn offset(self, d: State, h: f64) -> State {
        State {
            i1: self.i1 + h * d.i1,
            u2: self.u2 + h * d.u2,
        }
    }
}

fn slope(p: &CircuitParams, u1: f64, s: State) -> State {
    State {
        i1: (u1 - p.r1 * s.i1 - s.u2) / p.l,
        u2: (s.i1 - s.u2 / p.r_load) / capacitance(s.u2, p),
    }
}

pub fn simulate(p: &CircuitParams, source: &WaveformSpec, dt: f64, len: usize) -> Result<SimOutput> {
    p.validate()?;
    source.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidConfig(format!("time step must be > 0, got {dt}")));
    }
    if len < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 samples, got {len}")));
    }
    if dt > p.time_scale() / 10.0 {
        warn!(
            "time step {dt:e} s is coarse against the circuit time scale {:e} s",
            p.time_scale()
        );
    }

    let mut rows = Vec::with_capacity(len * 4);
    let mut du2_dt = Vec::with_capacity(len);
    let mut s = State { i1: 0.0, u2: 0.0 };
    for n in 0..len {
        let t = n as f64 * dt;
        let u1 = source.eval(t);
        let k1 = slope(p, u1, s);
        if !(s.i1.is_finite() && s.u2.is_finite() && k1.i1.is_finite() && k1.u2.is_finite()) {
            return Err(Error::Unstable { index: n });
        }
        rows.extend_from_slice(&[u1, s.i1, s.u2, s.u2 / p.r_load]);
        du2_dt.push(k1.u2);
        if n + 1 == len {
            break;
        }
        let u_mid = source.eval(t + 0.5 * dt);
        let k2 = slope(p, u_mid, s.offset(k1, 0.5 * dt));
        let k3 = slope(p, u_mid, s.offset(k2, 0.5 * dt));
        let k4 = slope(p, source.eval(t + dt), s.offset(k3, dt));
        s = State {
            i1: s.i1 + dt / 6.0 * (k1.i1 + 2.0 * k2.i1 + 2.0 * k3.i1 + k4.i1),
            u2: s.u2 + dt / 6.0 * (k1.u2 + 2.0 * k2.u2 + 2.0 * k3.u2 + k4.u2),
        };
    }
    let series = TimeSeriesSet::new(
        FEATURES.iter().map(|s| s.to_string()).collect(),
        0.0,
        dt,
        Tensor::from_matrix(len, 4, rows)?,
    )?;
    Ok(SimOutput { series, du2_dt })
}

/// `max |i1 - C(u2) du2/dt - i2| / max |i1|` over the dataset.
pub fn kcl_residual(out: &SimOutput, p: &CircuitParams) -> f64 {
    let s = &out.series;
    let (i1, u2, i2) = (s.column(1), s.column(2), s.column(3));
    let worst = (0..s.len())
        .map(|k| (i1[k] - capacitance(u2[k], p) * out.du2_dt[k] - i2[k]).abs())
        .fold(0.0, f64::max);
    let scale = i1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        worst
    } else {
        worst / scale
    }
}

/// Step-halving check of the integrator order: endpoint error at `dt`
/// divided by the endpoint error at `dt / 2`, both measured against a
/// `dt / 8` run over the same horizon `(len - 1) dt`. Errors are taken per
/// state variable relative to the reference's peak magnitude. A fourth-order
/// method on a smooth source gives about 16.
pub fn convergence_ratio(p: &CircuitParams, source: &WaveformSpec, dt: f64, len: usize) -> Result<f64> {
    let endpoint = |refine: usize| -> Result<(SimOutput, usize)> {
        let n = (len - 1) * refine + 1;
        Ok((simulate(p, source, dt / refine as f64, n)?, n - 1))
    };
    let (reference, last_ref) = endpoint(8)?;
    let peak = |j: usize| {
        reference
            .series
            .column(j)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE)
    };
    let scale = [peak(1), peak(2)];
    let error = |refine: usize| -> Result<f64> {
        let (run, last) = endpoint(refine)?;
        Ok([1, 2]
            .iter()
            .zip(scale)
            .map(|(&j, s)| (run.series.values().at(last, j) - reference.series.values().at(last_ref, j)).abs() / s)
            .fold(0.0, f64::max))
    };
    let coarse = error(1)?;
    let fine = error(2)?;
    if fine == 0.0 {
        return Err(Error::InvalidConfig(format!(
            "time step {dt:e} is too fine to resolve the integrator error"
        )));
    }
    Ok(coarse / fine)
}

/// Linear interpolation of irregular samples onto a grid `t0 + k dt`
/// covering `[times[0], times[last]]`.
pub fn resample_linear(names: Vec<String>, times: &[f64], columns: &[Vec<f64>], dt: f64) -> Result<TimeSeriesSet> {
    if times.len() < 2 || columns.iter().any(|c| c.len() != times.len()) {
        return Err(Error::InvalidConfig("need >= 2 samples per column".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidConfig("time stamps must be strictly increasing".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!("time step must be > 0, got {dt}")));
    }
    let t0 = times[0];
    let span = times[times.len() - 1] - t0;
    let count = (span / dt * (1.0 + 1e-12)).floor() as usize + 1;
    let mut out: Vec<Vec<f64>> = vec![Vec::with_capacity(count); columns.len()];
    let mut seg = 0;
    for k in 0..count {
        let t = t0 + k as f64 * dt;
        while seg + 2 < times.len() && times[seg + 1] < t {
            seg += 1;
        }
        let (ta, tb) = (times[seg], times[seg + 1]);
        let w = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
        for (o, c) in out.iter_mut().zip(columns) {
            o.push(c[seg] + w * (c[seg + 1] - c[seg]));
        }
    }
    TimeSeriesSet::from_columns(names, t0, dt, &out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub params: CircuitParams,
    /// s; 4 Msamples/s by default, about 80 samples per resonance period.
    pub dt: f64,
    pub len: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            params: CircuitParams::default(),
            dt: 2.5e-7,
            len: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub name: String,
    pub waveform: WaveformSpec,
    pub output: SimOutput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Suite {
    pub seed: u64,
    pub train: Vec<SuiteEntry>,
    pub test: Vec<SuiteEntry>,
}

/// Jitters nominal amplitudes by ±10 % and draws sine phases.
struct Jitter(Xoshiro256PlusPlus);

impl Jitter {
    fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn scale(&mut self, nominal: f64) -> f64 {
        nominal * (0.9 + 0.2 * self.unit())
    }

    fn sine(&mut self, amplitude: f64, frequency: f64) -> WaveTerm {
        WaveTerm::Sine {
            amplitude: self.scale(amplitude),
            frequency,
            phase: TAU * self.unit(),
        }
    }
}

/// Excitation name and source.
pub type NamedWaveform = (String, WaveformSpec);

/// The six training excitations and one held-out test excitation.
///
/// Frequencies are tied to the record length `H = len * dt`: "low" sines do
/// one period over the record, "high" ones 8-12, and trapezoid periods are
/// fractions of `H`. With the defaults (`H` = 500 µs) the high sines sit at
/// 16-24 kHz, below the filter's small-signal resonance of about 50 kHz,
/// and trapezoid edges ring it.
///
/// | name | terms |
/// |------|-------|
/// | `dc_step` | DC 8 V |
/// | `dc_lf_sine` | DC 2 V + 6 V sine at `1/H` |
/// | `dc_hf_sine` | DC 5 V + 3 V sine at `10/H` |
/// | `trapezoid` | 0..10 V trapezoid, period `H/2` |
/// | `lf_hf_sine` | 5 V sine at `1/H` + 2 V sine at `8/H` |
/// | `trapezoid_hf` | -4..6 V trapezoid, period `0.4 H`, + 1.5 V sine at `12/H` |
/// | test `dc_lf_trapezoid` | DC 1 V + 3 V sine at `1.5/H` + 0..4 V trapezoid, period `0.35 H` |
pub fn suite_waveforms(seed: u64, horizon: f64) -> (Vec<NamedWaveform>, Vec<NamedWaveform>) {
    let mut j = Jitter(Xoshiro256PlusPlus::seed_from_u64(seed));
    let h = horizon;
    let trapezoid = |j: &mut Jitter, low: f64, high: f64, period: f64| WaveTerm::Trapezoid {
        low: j.scale(low),
        high: j.scale(high),
        rise: 0.1 * period,
        high_time: 0.4 * period,
        fall: 0.1 * period,
        period,
    };
    let train = vec![
        ("dc_step", vec![WaveTerm::Dc { level: j.scale(8.0) }]),
        (
            "dc_lf_sine",
            vec![WaveTerm::Dc { level: j.scale(2.0) }, j.sine(6.0, 1.0 / h)],
        ),
        (
            "dc_hf_sine",
            vec![WaveTerm::Dc { level: j.scale(5.0) }, j.sine(3.0, 10.0 / h)],
        ),
        ("trapezoid", vec![trapezoid(&mut j, 0.0, 10.0, 0.5 * h)]),
        ("lf_hf_sine", vec![j.sine(5.0, 1.0 / h), j.sine(2.0, 8.0 / h)]),
        (
            "trapezoid_hf",
            vec![trapezoid(&mut j, -4.0, 6.0, 0.4 * h), j.sine(1.5, 12.0 / h)],
        ),
    ];
    let test = vec![(
        "dc_lf_trapezoid",
        vec![
            WaveTerm::Dc { level: j.scale(1.0) },
            j.sine(3.0, 1.5 / h),
            trapezoid(&mut j, 0.0, 4.0, 0.35 * h),
        ],
    )];
    let wrap = |v: Vec<(&str, Vec<WaveTerm>)>| {
        v.into_iter()
            .map(|(n, t)| (n.to_string(), WaveformSpec::new(t)))
            .collect()
    };
    (wrap(train), wrap(test))
}

pub fn generate_suite(seed: u64, config: &SuiteConfig) -> Result<Suite> {
    let (train, test) = suite_waveforms(seed, config.dt * config.len as f64);
    let run = |list: Vec<NamedWaveform>| -> Result<Vec<SuiteEntry>> {
        list.into_iter()
            .map(|(name, waveform)| {
                let output = simulate(&config.params, &waveform, config.dt, config.len)?;
                Ok(SuiteEntry { name, waveform, output })
            })
            .collect()
    };
    Ok(Suite {
        seed,
        train: run(train)?,
        test: run(test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capacitance_closed_forms() {
        let p = CircuitParams::default();
        assert_eq!(capacitance(0.0, &p), p.c0);
        assert!((capacitance(p.v0, &p) - p.c0 / 2.0).abs() < 1e-20);
        assert!((capacitance(2.0 * p.v0, &p) - p.c0 / 5.0).abs() < 1e-20);
        assert_eq!(capacitance(-3.0, &p), capacitance(3.0, &p));
        assert!(capacitance(7.0, &p) < capacitance(6.0, &p));
    }

    #[test]
    fn trapezoid_shape() {
        let w = WaveTerm::Trapezoid {
            low: 0.0,
            high: 10.0,
            rise: 1.0,
            high_time: 2.0,
            fall: 1.0,
            period: 5.0,
        };
        let samples: Vec<f64> = [0.0, 0.5, 1.0, 2.5, 3.5, 4.5, 5.5].iter().map(|&t| w.eval(t)).collect();
        assert_eq!(samples, vec![0.0, 5.0, 10.0, 10.0, 5.0, 0.0, 5.0]);
    }

    #[test]
    fn invalid_waveforms_rejected() {
        let bad = WaveformSpec::new(vec![WaveTerm::Sine {
            amplitude: 1.0,
            frequency: 0.0,
            phase: 0.0,
        }]);
        assert!(simulate(&CircuitParams::default(), &bad, 1e-8, 10).is_err());
        let bad = WaveformSpec::new(vec![WaveTerm::Trapezoid {
            low: 0.0,
            high: 1.0,
            rise: 1.0,
            high_time: 1.0,
            fall: 1.0,
            period: 2.0,
        }]);
        assert!(bad.validate().is_err());
        let ok = WaveformSpec::new(vec![WaveTerm::Dc { level: 1.0 }]);
        assert!(simulate(&CircuitParams::default(), &ok, 0.0, 10).is_err());
        assert!(simulate(&CircuitParams::default(), &ok, 1e-8, 1).is_err());
        let mut p = CircuitParams::default();
        p.l = 0.0;
        assert!(simulate(&p, &ok, 1e-8, 10).is_err());
    }

    #[test]
    fn zero_source_stays_at_rest() {
        let out = simulate(&CircuitParams::default(), &WaveformSpec::default(), 1e-8, 100).unwrap();
        assert!(out.series.values().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dc_steady_state_is_the_resistive_divider() {
        let p = CircuitParams::default();
        let src = WaveformSpec::new(vec![WaveTerm::Dc { level: 5.0 }]);
        let out = simulate(&p, &src, 1e-8, 30_000).unwrap();
        let last = out.series.len() - 1;
        let i1 = out.series.values().at(last, 1);
        let u2 = out.series.values().at(last, 2);
        let i1_ss = 5.0 / (p.r1 + p.r_load);
        let u2_ss = i1_ss * p.r_load;
        assert!(((i1 - i1_ss) / i1_ss).abs() < 1e-3, "{i1}");
        assert!(((u2 - u2_ss) / u2_ss).abs() < 1e-3, "{u2}");
    }

    #[test]
    fn unstable_step_is_reported() {
        let src = WaveformSpec::new(vec![WaveTerm::Dc { level: 5.0 }]);
        match simulate(&CircuitParams::default(), &src, 1e-4, 200) {
            Err(Error::Unstable { index }) => assert!(index > 0),
            other => panic!("expected instability, got {other:?}"),
        }
    }

    #[test]
    fn resample_linear_interpolates() {
        let s = resample_linear(vec!["x".into()], &[0.0, 1.0, 3.0], &[vec![0.0, 2.0, 6.0]], 0.5).unwrap();
        assert_eq!(s.column(0), vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(s.dt(), 0.5);
        assert!(resample_linear(vec!["x".into()], &[0.0, 0.0], &[vec![1.0, 1.0]], 0.1).is_err());
    }

    #[test]
    fn suite_is_seeded() {
        let cfg = SuiteConfig {
            len: 50,
            ..SuiteConfig::default()
        };
        let a = generate_suite(3, &cfg).unwrap();
        let b = generate_suite(3, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.len(), 6);
        assert_eq!(a.test.len(), 1);
        let c = generate_suite(4, &cfg).unwrap();
        assert_ne!(a.train[0].waveform, c.train[0].waveform);
    }
}
