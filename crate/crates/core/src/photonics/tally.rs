use serde::{Deserialize, Serialize};

use super::timetag::{Timetag, CLOCK_CHANNEL};
use super::{PulseClass, PulseSchedule};
use crate::decoy::{ChannelObservables, DecoyError, ProtocolParams};
use crate::rng::mix64;

/// Largest photon number with its own histogram bin; larger counts share it.
pub const MAX_PHOTONS: usize = 16;

const SQUASH_SALT: u64 = 0x7371_7561_7368_0000;

/// Per-class counts feeding the key-rate estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct TallyCounts {
    pub sent: [u64; 3],
    /// Pulses with at least one accepted detection.
    pub detected: [u64; 3],
    /// Accepted detections whose bit disagrees with Alice's.
    pub errors: [u64; 3],
    /// Inter-pulse slots inspected for the vacuum yield.
    pub gap_slots: u64,
    /// Inter-pulse slots holding at least one detection.
    pub gap_detections: u64,
    /// Acceptance-window width over the gap-slot width. The vacuum yield of
    /// a full window is extrapolated from the gap yield with this exponent.
    pub gap_scale: f64,
    /// Ground-truth histogram by emitted photon number (oracle runs only).
    pub photon_numbers: Option<PhotonNumberTally>,
}

impl Default for TallyCounts {
    fn default() -> Self {
        Self {
            sent: [0; 3],
            detected: [0; 3],
            errors: [0; 3],
            gap_slots: 0,
            gap_detections: 0,
            gap_scale: 1.0,
            photon_numbers: None,
        }
    }
}

impl TallyCounts {
    pub fn gain(&self, class: PulseClass) -> f64 {
        ratio(self.detected[class.index()], self.sent[class.index()])
    }

    pub fn qber(&self, class: PulseClass) -> f64 {
        ratio(self.errors[class.index()], self.detected[class.index()])
    }

    /// Vacuum yield per acceptance window, pooling vacuum-class pulses and
    /// inter-pulse slots.
    pub fn y_zero(&self) -> f64 {
        let vac = PulseClass::Vacuum.index();
        let gap_yield = if self.gap_slots > 0 {
            let p = ratio(self.gap_detections, self.gap_slots);
            -(self.gap_scale * (-p).ln_1p()).exp_m1()
        } else {
            0.0
        };
        let weight = self.sent[vac] + self.gap_slots;
        if weight == 0 {
            return 0.0;
        }
        ((self.detected[vac] as f64 + gap_yield * self.gap_slots as f64) / weight as f64).min(1.0)
    }

    /// Gains, error rates and counts in the form the rate formula expects.
    pub fn observables(&self) -> Result<ChannelObservables, DecoyError> {
        let (s, d) = (PulseClass::Signal, PulseClass::Decoy);
        if self.sent[s.index()] == 0 || self.sent[d.index()] == 0 {
            return Err(DecoyError::Parameter(
                "tallies need both signal and decoy pulses".into(),
            ));
        }
        Ok(ChannelObservables {
            q_mu: self.gain(s),
            q_nu: self.gain(d),
            e_mu: self.qber(s),
            e_nu: self.qber(d),
            y_zero: self.y_zero(),
            n_mu: self.detected[s.index()] as f64,
            n_nu: self.detected[d.index()] as f64,
        })
    }

    /// Key rate in bits per pulse estimated from these counts.
    pub fn key_rate(&self, params: &ProtocolParams) -> Result<f64, DecoyError> {
        let obs = self.observables()?;
        let bounds = crate::decoy::decoy_bounds(params, &obs)?;
        crate::decoy::secure_key_rate(params, &obs, &bounds)
    }

    pub fn total_sent(&self) -> u64 {
        self.sent.iter().sum()
    }

    pub fn total_detected(&self) -> u64 {
        self.detected.iter().sum()
    }

    /// Adds `other` into `self`. Gap slots of both must use the same scale.
    pub fn merge(&mut self, other: &TallyCounts) {
        for k in 0..3 {
            self.sent[k] += other.sent[k];
            self.detected[k] += other.detected[k];
            self.errors[k] += other.errors[k];
        }
        if self.gap_slots == 0 {
            self.gap_scale = other.gap_scale;
        }
        self.gap_slots += other.gap_slots;
        self.gap_detections += other.gap_detections;
        match (&mut self.photon_numbers, &other.photon_numbers) {
            (Some(a), Some(b)) => a.merge(b),
            (None, Some(b)) => self.photon_numbers = Some(b.clone()),
            _ => {}
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Sent, detected and errored pulses by class and emitted photon number.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhotonNumberTally {
    pub sent: [[u64; MAX_PHOTONS + 1]; 3],
    pub detected: [[u64; MAX_PHOTONS + 1]; 3],
    pub errors: [[u64; MAX_PHOTONS + 1]; 3],
}

impl PhotonNumberTally {
    fn bin(photons: u32) -> usize {
        (photons as usize).min(MAX_PHOTONS)
    }

    pub fn record_sent(&mut self, class: PulseClass, photons: u32) {
        self.sent[class.index()][Self::bin(photons)] += 1;
    }

    pub fn record_detection(&mut self, class: PulseClass, photons: u32, error: bool) {
        let n = Self::bin(photons);
        self.detected[class.index()][n] += 1;
        self.errors[class.index()][n] += error as u64;
    }

    pub fn merge(&mut self, other: &PhotonNumberTally) {
        for c in 0..3 {
            for n in 0..=MAX_PHOTONS {
                self.sent[c][n] += other.sent[c][n];
                self.detected[c][n] += other.detected[c][n];
                self.errors[c][n] += other.errors[c][n];
            }
        }
    }

    /// Empirical yield of `n`-photon pulses, pooled over classes.
    pub fn yield_of(&self, n: usize) -> f64 {
        let sent: u64 = (0..3).map(|c| self.sent[c][n]).sum();
        let det: u64 = (0..3).map(|c| self.detected[c][n]).sum();
        ratio(det, sent)
    }

    /// Empirical error rate of detected `n`-photon pulses, pooled over classes.
    pub fn error_rate_of(&self, n: usize) -> f64 {
        let det: u64 = (0..3).map(|c| self.detected[c][n]).sum();
        let err: u64 = (0..3).map(|c| self.errors[c][n]).sum();
        ratio(err, det)
    }
}

/// Acceptance interval around each expected arrival.
///
/// `center` is the arrival offset from the nominal emission time (seconds);
/// the window spans `center ± width / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingWindow {
    pub center: f64,
    pub width: f64,
}

impl TimingWindow {
    /// Accept everything: each pulse owns the full period around its center.
    pub fn full_period(period: f64) -> Self {
        Self {
            center: 0.0,
            width: period,
        }
    }
}

/// Count in-window detections per class against Alice's schedule.
///
/// Clicks assigned to the same pulse merge into one detection; if they carry
/// different bits the pulse gets a random bit. For windows narrower than the
/// period the slot halfway between pulses is tallied as a vacuum measurement,
/// with width `min(width, period - width)` so it never overlaps a pulse window.
pub fn tally(
    stream: &[Timetag],
    schedule: &PulseSchedule,
    window: TimingWindow,
    tick_resolution: f64,
) -> TallyCounts {
    let period = schedule.period();
    let width = window.width.clamp(0.0, period);
    let half = width / 2.0;
    let gap_width = width.min(period - width);
    let use_gaps = width < period && gap_width > 0.0;
    let n = schedule.len();

    let mut counts = TallyCounts {
        sent: schedule.class_counts(),
        gap_slots: if use_gaps { n } else { 0 },
        gap_scale: if use_gaps { width / gap_width } else { 1.0 },
        ..TallyCounts::default()
    };

    // (pulse index, bits seen: bit0 = saw 0, bit1 = saw 1)
    let mut open: Option<(u64, u8)> = None;
    let mut last_gap: Option<u64> = None;
    let close = |slot: Option<(u64, u8)>, counts: &mut TallyCounts| {
        if let Some((k, seen)) = slot {
            let class = schedule.class_of(k);
            let bit = match seen {
                1 => 0,
                2 => 1,
                _ => (mix64(schedule.seed() ^ SQUASH_SALT, k) & 1) as u8,
            };
            counts.detected[class.index()] += 1;
            counts.errors[class.index()] += (bit != schedule.bit_of(k)) as u64;
        }
    };

    for tag in stream {
        if tag.channel == CLOCK_CHANNEL || tag.channel > 1 {
            continue;
        }
        let t = tag.tick as f64 * tick_resolution - window.center;
        let k = (t / period).round();
        let phase = t - k * period;
        if phase.abs() <= half && k >= 0.0 && (k as u64) < n {
            let k = k as u64;
            let mask = 1u8 << tag.channel;
            match open.as_mut() {
                Some((idx, seen)) if *idx == k => *seen |= mask,
                _ => {
                    close(open.take(), &mut counts);
                    open = Some((k, mask));
                }
            }
        } else if use_gaps {
            let g = ((t - period / 2.0) / period).round();
            let gphase = t - period / 2.0 - g * period;
            if gphase.abs() <= gap_width / 2.0
                && g >= 0.0
                && (g as u64) < n
                && last_gap != Some(g as u64)
            {
                last_gap = Some(g as u64);
                counts.gap_detections += 1;
            }
        }
    }
    close(open.take(), &mut counts);
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::photonics::{generate_pulse_train, PatternMode, SourceConfig, Truth};

    fn schedule(n: u64) -> PulseSchedule {
        let mut cfg = SourceConfig::default();
        cfg.pattern_mode = PatternMode::SeededRandom;
        generate_pulse_train(&cfg, n, 9)
    }

    #[test]
    fn empty_stream_gives_zero_detections() {
        let s = schedule(1000);
        let t = tally(&[], &s, TimingWindow::full_period(s.period()), 1e-12);
        assert_eq!(t.detected, [0; 3]);
        assert_eq!(t.errors, [0; 3]);
        assert_eq!(t.sent.iter().sum::<u64>(), 1000);
    }

    #[test]
    fn merges_clicks_and_flags_errors() {
        let s = schedule(100);
        let res = 1e-12;
        let tick = |k: u64| (s.emission_time(k) / res).round() as u64;
        let tag = |k: u64, ch: u8| Timetag {
            tick: tick(k),
            channel: ch,
            truth: Truth::Unlabeled,
        };
        let stream = vec![
            tag(3, s.bit_of(3)),
            tag(3, s.bit_of(3)),
            tag(10, s.bit_of(10) ^ 1),
            Timetag {
                tick: tick(12) + 1,
                channel: CLOCK_CHANNEL,
                truth: Truth::Clock,
            },
        ];
        let t = tally(&stream, &s, TimingWindow::full_period(s.period()), res);
        assert_eq!(t.total_detected(), 2);
        assert_eq!(t.errors.iter().sum::<u64>(), 1);
    }

    #[test]
    fn gap_slots_measure_vacuum() {
        let s = schedule(1000);
        let res = 1e-12;
        let p = s.period();
        // one click in the middle of every 10th gap
        let stream: Vec<Timetag> = (0..1000)
            .step_by(10)
            .map(|k| Timetag {
                tick: ((k as f64 + 0.5) * p / res).round() as u64,
                channel: 0,
                truth: Truth::Dark,
            })
            .collect();
        let t = tally(
            &stream,
            &s,
            TimingWindow {
                center: 0.0,
                width: 1e-9,
            },
            res,
        );
        assert_eq!(t.total_detected(), 0);
        assert_eq!(t.gap_slots, 1000);
        assert_eq!(t.gap_detections, 100);
        assert!((t.y_zero() - 0.1).abs() < 1e-12);
    }
}
