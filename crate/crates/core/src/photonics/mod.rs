//! Physical-layer Monte Carlo: pulse trains, channel thinning, detector
//! response and timetag bookkeeping.
//!
//! Two granularities are provided. [`simulate_detections`] produces an
//! event-level timetag stream (used for synchronisation and window sweeps);
//! [`block::sample_block_tallies`] draws per-block counts directly from the
//! same distributions, which is what long runs at 76 MHz need.

pub mod block;
mod schedule;
mod simulate;
mod tally;
mod timetag;

use serde::{Deserialize, Serialize};

use crate::decoy::{DecoyError, ProtocolParams};

pub use schedule::{generate_pulse_train, Pulse, PulseSchedule};
pub use simulate::{
    simulate_detections, simulate_detections_segmented, SimulationOutput, BLOCK_PULSES,
};
pub use tally::{tally, PhotonNumberTally, TallyCounts, TimingWindow};
pub use timetag::{read_timetags, write_timetags, Timetag, Truth, CLOCK_CHANNEL, RECORD_BYTES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PulseClass {
    Signal = 0,
    Decoy = 1,
    Vacuum = 2,
}

impl PulseClass {
    pub const ALL: [PulseClass; 3] = [PulseClass::Signal, PulseClass::Decoy, PulseClass::Vacuum];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PatternMode {
    /// A 256-pulse pseudorandom pattern repeated for the whole run.
    Repeating256,
    /// Every pulse drawn independently.
    SeededRandom,
}

impl std::str::FromStr for PatternMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "repeating_256" => Ok(Self::Repeating256),
            "seeded_random" => Ok(Self::SeededRandom),
            other => Err(format!("unknown pattern mode {other:?}")),
        }
    }
}

impl std::fmt::Display for PatternMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Repeating256 => "repeating_256",
            Self::SeededRandom => "seeded_random",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    pub protocol: ProtocolParams,
    pub pattern_mode: PatternMode,
    /// Standard deviation of Alice's emission-time spread, seconds.
    pub source_jitter: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        crate::calibration::experimental().source
    }
}

impl SourceConfig {
    /// Laser period in seconds.
    pub fn pulse_period(&self) -> f64 {
        1.0 / self.protocol.clock_rate
    }

    /// Laser period expressed in timetag ticks (generally not an integer).
    pub fn pulse_period_ticks(&self, tick_resolution: f64) -> f64 {
        self.pulse_period() / tick_resolution
    }

    pub fn validate(&self) -> Result<(), DecoyError> {
        self.protocol.validate()?;
        if !(self.source_jitter >= 0.0 && self.source_jitter.is_finite()) {
            return Err(DecoyError::Domain {
                name: "source_jitter",
                value: self.source_jitter,
                expected: ">= 0",
            });
        }
        Ok(())
    }
}

/// Receiver detectors, treated as one unit with two bit-value channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub efficiency: f64,
    /// Dark counts per second, summed over both detectors.
    pub dark_rate: f64,
    /// Stray-light counts per second, summed over both detectors.
    pub background_rate: f64,
    /// Gaussian timing jitter, seconds.
    pub jitter_sigma: f64,
    /// Per-detector blind time after a click, seconds.
    pub dead_time: f64,
    /// Timetag quantisation step, seconds.
    pub tick_resolution: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        crate::calibration::experimental().detector
    }
}

impl DetectorConfig {
    pub fn noise_rate(&self) -> f64 {
        self.dark_rate + self.background_rate
    }

    /// Channel transmittance (excluding detector efficiency) that yields the
    /// given total loss, which includes the detector.
    pub fn channel_transmittance(&self, total_loss_db: f64) -> f64 {
        (crate::db_to_transmittance(total_loss_db) / self.efficiency).min(1.0)
    }

    pub fn validate(&self) -> Result<(), DecoyError> {
        let checks: [(&'static str, f64, bool, &'static str); 6] = [
            (
                "efficiency",
                self.efficiency,
                (0.0..=1.0).contains(&self.efficiency),
                "[0, 1]",
            ),
            ("dark_rate", self.dark_rate, self.dark_rate >= 0.0, ">= 0"),
            (
                "background_rate",
                self.background_rate,
                self.background_rate >= 0.0,
                ">= 0",
            ),
            (
                "jitter_sigma",
                self.jitter_sigma,
                self.jitter_sigma >= 0.0,
                ">= 0",
            ),
            ("dead_time", self.dead_time, self.dead_time >= 0.0, ">= 0"),
            (
                "tick_resolution",
                self.tick_resolution,
                self.tick_resolution > 0.0,
                "> 0",
            ),
        ];
        for (name, value, ok, expected) in checks {
            if !ok || !value.is_finite() {
                return Err(DecoyError::Domain {
                    name,
                    value,
                    expected,
                });
            }
        }
        Ok(())
    }
}

/// Emission-to-detection timing spread: source and detector in quadrature.
pub fn combined_jitter(source_jitter: f64, detector_jitter: f64) -> f64 {
    source_jitter.hypot(detector_jitter)
}
