use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SyncError;
use crate::photonics::{Timetag, Truth, CLOCK_CHANNEL};
use crate::rng::{domain, substream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DriftMode {
    /// A fixed shift of `initial_offset`; no rate error.
    ConstantOffset,
    /// Constant fractional period error.
    Linear,
    /// Fractional error performing a Gaussian random walk, one step per
    /// segment.
    RandomWalk,
}

impl std::str::FromStr for DriftMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "constant_offset" => Ok(Self::ConstantOffset),
            "linear" => Ok(Self::Linear),
            "random_walk" => Ok(Self::RandomWalk),
            other => Err(format!("unknown drift mode {other:?}")),
        }
    }
}

impl std::fmt::Display for DriftMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ConstantOffset => "constant_offset",
            Self::Linear => "linear",
            Self::RandomWalk => "random_walk",
        })
    }
}

/// Relative clock behaviour between the two stations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockModel {
    /// Laser period, seconds.
    pub nominal_period: f64,
    /// `Linear`: the constant fractional error. `RandomWalk`: the standard
    /// deviation of each step of the fractional error.
    pub fractional_error: f64,
    pub drift_mode: DriftMode,
    /// One clock tag per this many laser periods.
    pub divide_ratio: u64,
    /// Offset at time zero, seconds.
    pub initial_offset: f64,
    /// Random-walk step interval, seconds.
    pub segment: f64,
}

impl Default for ClockModel {
    fn default() -> Self {
        let period = 1.0 / crate::calibration::experimental().protocol.clock_rate;
        Self {
            nominal_period: period,
            // one femtosecond per period
            fractional_error: 1e-15 / period,
            drift_mode: DriftMode::Linear,
            divide_ratio: 76,
            initial_offset: 0.0,
            segment: 1.0,
        }
    }
}

impl ClockModel {
    pub fn validate(&self) -> Result<(), SyncError> {
        let checks: [(&'static str, f64, bool, &'static str); 5] = [
            (
                "nominal_period",
                self.nominal_period,
                self.nominal_period > 0.0,
                "> 0",
            ),
            (
                "fractional_error",
                self.fractional_error,
                self.fractional_error.abs() < 1e-3,
                "|e| < 1e-3",
            ),
            (
                "divide_ratio",
                self.divide_ratio as f64,
                self.divide_ratio >= 1,
                ">= 1",
            ),
            ("initial_offset", self.initial_offset, true, "finite"),
            ("segment", self.segment, self.segment > 0.0, "> 0"),
        ];
        for (name, value, ok, expected) in checks {
            if !ok || !value.is_finite() {
                return Err(SyncError::Domain {
                    name,
                    value,
                    expected,
                });
            }
        }
        Ok(())
    }

    /// Interval between clock tags, seconds.
    pub fn tag_interval(&self) -> f64 {
        self.divide_ratio as f64 * self.nominal_period
    }
}

/// Piecewise-linear time distortion `t -> t + D(t)` with
/// `D'(t) = e_k` on segment `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftProfile {
    segment: f64,
    /// Fractional error on each segment.
    eps: Vec<f64>,
    /// `D` at the start of each segment.
    offset: Vec<f64>,
}

impl DriftProfile {
    /// Realise `clock` over `[0, horizon]`. The realisation is a prefix of
    /// the one for any longer horizon with the same seed.
    pub fn new(clock: &ClockModel, horizon: f64, seed: u64) -> Self {
        let n = ((horizon.max(0.0) / clock.segment).ceil() as usize).max(1);
        let eps: Vec<f64> = match clock.drift_mode {
            DriftMode::ConstantOffset => vec![0.0; n],
            DriftMode::Linear => vec![clock.fractional_error; n],
            DriftMode::RandomWalk => {
                let step = Normal::new(0.0, clock.fractional_error.abs()).expect("finite step");
                let mut rng = substream(seed, domain::DRIFT);
                let mut e = 0.0;
                (0..n)
                    .map(|_| {
                        e += step.sample(&mut rng);
                        e
                    })
                    .collect()
            }
        };
        let mut offset = Vec::with_capacity(n);
        let mut d = clock.initial_offset;
        for &e in &eps {
            offset.push(d);
            d += e * clock.segment;
        }
        Self {
            segment: clock.segment,
            eps,
            offset,
        }
    }

    /// The identity distortion.
    pub fn identity() -> Self {
        Self {
            segment: 1.0,
            eps: vec![0.0],
            offset: vec![0.0],
        }
    }

    fn segment_of(&self, t: f64) -> usize {
        ((t / self.segment).floor().max(0.0) as usize).min(self.eps.len() - 1)
    }

    /// Accumulated offset `D(t)`, seconds.
    pub fn offset(&self, t: f64) -> f64 {
        let k = self.segment_of(t);
        self.offset[k] + self.eps[k] * (t - k as f64 * self.segment)
    }

    pub fn fractional_error_at(&self, t: f64) -> f64 {
        self.eps[self.segment_of(t)]
    }

    pub fn map(&self, t: f64) -> f64 {
        t + self.offset(t)
    }

    /// Inverse of [`map`](Self::map).
    pub fn invert(&self, tau: f64) -> f64 {
        let knot = |k: usize| k as f64 * self.segment + self.offset[k];
        // last segment whose mapped start is <= tau
        let (mut lo, mut hi) = (0usize, self.eps.len());
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if knot(mid) <= tau {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo as f64 * self.segment + (tau - knot(lo)) / (1.0 + self.eps[lo])
    }

    /// Peak-to-peak excursion of `D` over the realised horizon.
    pub fn excursion(&self) -> f64 {
        let end = self.offset[self.offset.len() - 1] + self.eps[self.eps.len() - 1] * self.segment;
        let (lo, hi) = self
            .offset
            .iter()
            .chain(std::iter::once(&end))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
                (a.min(x), b.max(x))
            });
        hi - lo
    }

    /// Re-express a stream in the distorted time base.
    pub fn apply(&self, stream: &[Timetag], tick_resolution: f64) -> Vec<Timetag> {
        stream
            .iter()
            .map(|t| Timetag {
                tick: (self.map(t.tick as f64 * tick_resolution) / tick_resolution)
                    .round()
                    .max(0.0) as u64,
                ..*t
            })
            .collect()
    }
}

/// Distort `stream` with a fresh realisation of `clock`.
pub fn apply_clock_drift(
    stream: &[Timetag],
    clock: &ClockModel,
    tick_resolution: f64,
    seed: u64,
) -> Vec<Timetag> {
    let horizon = stream
        .last()
        .map_or(0.0, |t| t.tick as f64 * tick_resolution);
    DriftProfile::new(clock, horizon, seed).apply(stream, tick_resolution)
}

/// Clock tags, one per `divide_ratio` laser periods over `duration`, passed
/// through `profile`.
pub fn clock_tags_through(
    profile: &DriftProfile,
    clock: &ClockModel,
    duration: f64,
    tick_resolution: f64,
) -> Vec<Timetag> {
    let step = clock.tag_interval();
    let n = (duration / step).ceil().max(0.0) as u64;
    (0..n)
        .map(|j| j as f64 * step)
        .take_while(|&t| t < duration)
        .map(|t| Timetag {
            tick: (profile.map(t) / tick_resolution).round().max(0.0) as u64,
            channel: CLOCK_CHANNEL,
            truth: Truth::Clock,
        })
        .collect()
}

/// Clock tags subject to `clock`'s drift.
pub fn generate_clock_tags(
    clock: &ClockModel,
    duration: f64,
    tick_resolution: f64,
    seed: u64,
) -> Vec<Timetag> {
    clock_tags_through(
        &DriftProfile::new(clock, duration, seed),
        clock,
        duration,
        tick_resolution,
    )
}
