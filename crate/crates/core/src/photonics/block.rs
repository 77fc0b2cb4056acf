//! Block-level sampling: per-block counts drawn straight from their
//! distributions instead of event by event.
//!
//! Within one block the pulse classes are multinomial, in-window signal
//! clicks per class are binomial in the class size, and noise fills the
//! remaining slots with probability `Y0`. That is the same model the
//! event-level simulator implements, summed, so a 1000 s run at 76 MHz costs
//! a few thousand binomial draws.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::Serialize;

use super::{combined_jitter, DetectorConfig, PulseClass, TallyCounts};
use crate::decoy::{one_minus_exp_neg, ProtocolParams};
use crate::rng::{domain, substream};
use crate::window::{noise_yield, window_fraction};

/// Fixed inputs of a block sampler.
#[derive(Debug, Clone, Copy)]
pub struct BlockModel {
    pub params: ProtocolParams,
    pub detector: DetectorConfig,
    pub source_jitter: f64,
    /// Acceptance window width, seconds.
    pub window: f64,
}

impl BlockModel {
    /// Fraction of signal arrivals that land inside the window.
    pub fn in_window_fraction(&self) -> f64 {
        window_fraction(
            self.window,
            combined_jitter(self.source_jitter, self.detector.jitter_sigma),
        )
    }

    /// Noise click probability per window.
    pub fn y_zero(&self) -> f64 {
        noise_yield(self.window, self.detector.noise_rate())
    }
}

fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial").sample(rng)
}

/// Draw the tallies of `n_pulses` pulses through channel transmittance `eta`
/// (detector efficiency applied on top). Every pulse also contributes one
/// inter-pulse vacuum slot.
pub fn sample_block_tallies<R: Rng + ?Sized>(
    model: &BlockModel,
    eta: f64,
    n_pulses: u64,
    rng: &mut R,
) -> TallyCounts {
    let p = &model.params;
    let scale = eta * model.detector.efficiency * model.in_window_fraction();
    let y0 = model.y_zero();

    let n_signal = binomial(n_pulses, p.p_signal, rng);
    let rest = p.p_decoy + p.p_vacuum;
    let n_decoy = if rest > 0.0 {
        binomial(n_pulses - n_signal, p.p_decoy / rest, rng)
    } else {
        0
    };
    let sent = [n_signal, n_decoy, n_pulses - n_signal - n_decoy];
    let mut counts = TallyCounts {
        sent,
        gap_slots: n_pulses,
        ..TallyCounts::default()
    };
    for class in PulseClass::ALL {
        let k = class.index();
        let m = [p.mu, p.nu, 0.0][k];
        let clicks = binomial(sent[k], one_minus_exp_neg(m * scale), rng);
        let noise = binomial(sent[k] - clicks, y0, rng);
        counts.detected[k] = clicks + noise;
        counts.errors[k] = binomial(clicks, p.e_detector, rng) + binomial(noise, p.e_zero, rng);
    }
    counts.gap_detections = binomial(n_pulses, y0, rng);
    counts
}

/// One reporting interval of a long fixed-loss run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityPoint {
    /// Interval start, seconds.
    pub time: f64,
    /// In-window detections per second.
    pub raw_rate: f64,
    pub qber: f64,
    /// Secure key rate, bits per second.
    pub secure_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityRun {
    pub points: Vec<StabilityPoint>,
    pub mean_secure_rate: f64,
    pub mean_qber: f64,
}

/// Key rate and QBER, evaluated per `interval` seconds, over `duration`
/// seconds at constant channel transmittance `eta`.
pub fn stability_run(
    model: &BlockModel,
    eta: f64,
    duration: f64,
    interval: f64,
    seed: u64,
) -> StabilityRun {
    let clock = model.params.clock_rate;
    let n_intervals = (duration / interval).ceil().max(1.0) as u64;
    let points: Vec<StabilityPoint> = (0..n_intervals)
        .into_par_iter()
        .map(|i| {
            let start = i as f64 * interval;
            let span = interval.min(duration - start).max(0.0);
            let n = (clock * span).round() as u64;
            let mut rng = substream(seed, domain::BLOCKS + i);
            let t = sample_block_tallies(model, eta, n, &mut rng);
            let rate = t.key_rate(&model.params).unwrap_or(0.0);
            let signal = t.detected[0] + t.detected[1];
            StabilityPoint {
                time: start,
                raw_rate: signal as f64 / span,
                qber: t.qber(PulseClass::Signal),
                secure_rate: rate * clock,
            }
        })
        .collect();
    let k = points.len() as f64;
    StabilityRun {
        mean_secure_rate: points.iter().map(|p| p.secure_rate).sum::<f64>() / k,
        mean_qber: points.iter().map(|p| p.qber).sum::<f64>() / k,
        points,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoy::channel_model;

    fn model() -> BlockModel {
        let cal = crate::calibration::experimental();
        BlockModel {
            params: cal.protocol,
            detector: cal.detector,
            source_jitter: cal.source.source_jitter,
            window: 1e-9,
        }
    }

    #[test]
    fn block_gains_match_closed_form() {
        let m = model();
        let eta = 1e-3;
        let mut rng = substream(1, 0);
        let t = sample_block_tallies(&m, eta, 200_000_000, &mut rng);
        let total = eta * m.detector.efficiency * m.in_window_fraction();
        let expect =
            channel_model(m.params.mu, total, m.y_zero(), m.params.e_detector, 0.5).unwrap();
        let n = t.sent[0] as f64;
        let sd = (expect.gain / n).sqrt();
        assert!((t.gain(PulseClass::Signal) - expect.gain).abs() < 5.0 * sd);
        let sd_e = (expect.qber * (1.0 - expect.qber) / t.detected[0] as f64).sqrt();
        assert!((t.qber(PulseClass::Signal) - expect.qber).abs() < 5.0 * sd_e);
        assert_eq!(t.total_sent(), 200_000_000);
    }

    #[test]
    fn stability_is_deterministic() {
        let m = model();
        let a = stability_run(&m, 1e-4, 3.0, 1.0, 7);
        let b = stability_run(&m, 1e-4, 3.0, 1.0, 7);
        assert_eq!(a, b);
        assert_eq!(a.points.len(), 3);
    }
}
