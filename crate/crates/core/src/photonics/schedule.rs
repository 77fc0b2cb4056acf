use rayon::prelude::*;

use super::{PatternMode, PulseClass, SourceConfig};
use crate::rng::{mix64, unit_f64};

const CLASS_SALT: u64 = 0x636c_6173_7300_0000;
const BIT_SALT: u64 = 0x6269_7400_0000_0000;
const PATTERN_LEN: u64 = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pulse {
    pub index: u64,
    pub class: PulseClass,
    pub mean_photon_number: f64,
    /// Nominal emission time, seconds.
    pub emission_time: f64,
    /// Alice's bit value.
    pub bit: u8,
}

/// Alice's pulse sequence.
///
/// Classes and bits are a pure function of `(seed, index)`, so the schedule
/// is random-access and never materialised; a billion-pulse run costs the
/// same memory as a hundred-pulse one.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseSchedule {
    mode: PatternMode,
    seed: u64,
    n_pulses: u64,
    period: f64,
    source_jitter: f64,
    e_detector: f64,
    mean_photons: [f64; 3],
    thresholds: [f64; 2],
}

/// Build the schedule for `n_pulses` pulses.
pub fn generate_pulse_train(cfg: &SourceConfig, n_pulses: u64, seed: u64) -> PulseSchedule {
    let p = &cfg.protocol;
    PulseSchedule {
        mode: cfg.pattern_mode,
        seed,
        n_pulses,
        period: cfg.pulse_period(),
        source_jitter: cfg.source_jitter,
        e_detector: p.e_detector,
        mean_photons: [p.mu, p.nu, 0.0],
        thresholds: [p.p_signal, p.p_signal + p.p_decoy],
    }
}

impl PulseSchedule {
    pub fn len(&self) -> u64 {
        self.n_pulses
    }

    pub fn is_empty(&self) -> bool {
        self.n_pulses == 0
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mode(&self) -> PatternMode {
        self.mode
    }

    /// Laser period, seconds.
    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn source_jitter(&self) -> f64 {
        self.source_jitter
    }

    /// Probability that a detected photon lands on the wrong bit.
    pub fn e_detector(&self) -> f64 {
        self.e_detector
    }

    /// Time span covered by the pulses, seconds.
    pub fn span(&self) -> f64 {
        self.n_pulses as f64 * self.period
    }

    pub fn max_mean_photon_number(&self) -> f64 {
        self.mean_photons.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean_photon_number_of(&self, class: PulseClass) -> f64 {
        self.mean_photons[class.index()]
    }

    fn pattern_slot(&self, index: u64) -> u64 {
        match self.mode {
            PatternMode::Repeating256 => index % PATTERN_LEN,
            PatternMode::SeededRandom => index,
        }
    }

    pub fn class_of(&self, index: u64) -> PulseClass {
        let u = unit_f64(self.seed ^ CLASS_SALT, self.pattern_slot(index));
        if u < self.thresholds[0] {
            PulseClass::Signal
        } else if u < self.thresholds[1] {
            PulseClass::Decoy
        } else {
            PulseClass::Vacuum
        }
    }

    pub fn bit_of(&self, index: u64) -> u8 {
        (mix64(self.seed ^ BIT_SALT, self.pattern_slot(index)) & 1) as u8
    }

    pub fn mean_photon_number(&self, index: u64) -> f64 {
        self.mean_photons[self.class_of(index).index()]
    }

    pub fn emission_time(&self, index: u64) -> f64 {
        index as f64 * self.period
    }

    pub fn emission_tick(&self, index: u64, tick_resolution: f64) -> u64 {
        (self.emission_time(index) / tick_resolution).round() as u64
    }

    pub fn pulse(&self, index: u64) -> Pulse {
        let class = self.class_of(index);
        Pulse {
            index,
            class,
            mean_photon_number: self.mean_photons[class.index()],
            emission_time: self.emission_time(index),
            bit: self.bit_of(index),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Pulse> + '_ {
        (0..self.n_pulses).map(move |i| self.pulse(i))
    }

    /// Pulses per class over `[start, end)`.
    pub fn class_counts_in(&self, start: u64, end: u64) -> [u64; 3] {
        let end = end.min(self.n_pulses);
        if start >= end {
            return [0; 3];
        }
        match self.mode {
            PatternMode::Repeating256 => {
                let mut per_slot = [[0u64; 3]; PATTERN_LEN as usize + 1];
                for s in 0..PATTERN_LEN {
                    per_slot[s as usize + 1] = per_slot[s as usize];
                    per_slot[s as usize + 1][self.class_of(s).index()] += 1;
                }
                // prefix(i) = pulses of each class in [0, i)
                let prefix = |i: u64| {
                    let full = i / PATTERN_LEN;
                    let rem = (i % PATTERN_LEN) as usize;
                    let mut c = [0u64; 3];
                    for k in 0..3 {
                        c[k] = full * per_slot[PATTERN_LEN as usize][k] + per_slot[rem][k];
                    }
                    c
                };
                let (a, b) = (prefix(start), prefix(end));
                [b[0] - a[0], b[1] - a[1], b[2] - a[2]]
            }
            PatternMode::SeededRandom => {
                const CHUNK: u64 = 1 << 20;
                let chunks: Vec<u64> = (start..end).step_by(CHUNK as usize).collect();
                chunks
                    .par_iter()
                    .map(|&c0| {
                        let mut c = [0u64; 3];
                        for i in c0..(c0 + CHUNK).min(end) {
                            c[self.class_of(i).index()] += 1;
                        }
                        c
                    })
                    .reduce(|| [0; 3], |a, b| [a[0] + b[0], a[1] + b[1], a[2] + b[2]])
            }
        }
    }

    pub fn class_counts(&self) -> [u64; 3] {
        self.class_counts_in(0, self.n_pulses)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoy::ProtocolParams;

    fn source(ps: f64, pd: f64, pv: f64, mode: PatternMode) -> SourceConfig {
        SourceConfig {
            protocol: ProtocolParams {
                p_signal: ps,
                p_decoy: pd,
                p_vacuum: pv,
                ..ProtocolParams::default()
            },
            pattern_mode: mode,
            source_jitter: 0.0,
        }
    }

    #[test]
    fn all_signal() {
        let cfg = source(1.0, 0.0, 0.0, PatternMode::SeededRandom);
        let s = generate_pulse_train(&cfg, 100, 3);
        assert_eq!(s.iter().count(), 100);
        for (k, p) in s.iter().enumerate() {
            assert_eq!(p.class, PulseClass::Signal);
            assert_eq!(p.emission_time, k as f64 * cfg.pulse_period());
        }
        assert_eq!(s.class_counts(), [100, 0, 0]);
    }

    #[test]
    fn repeating_pattern_repeats() {
        let cfg = source(0.5, 0.3, 0.2, PatternMode::Repeating256);
        let s = generate_pulse_train(&cfg, 512, 11);
        for i in 0..256 {
            assert_eq!(s.class_of(i), s.class_of(i + 256));
            assert_eq!(s.bit_of(i), s.bit_of(i + 256));
        }
        let brute: [u64; 3] = s.iter().fold([0; 3], |mut c, p| {
            c[p.class.index()] += 1;
            c
        });
        assert_eq!(s.class_counts(), brute);
        assert_eq!(s.class_counts_in(100, 400), {
            let mut c = [0; 3];
            for i in 100..400 {
                c[s.class_of(i).index()] += 1;
            }
            c
        });
    }

    #[test]
    fn multinomial_frequencies() {
        let cfg = source(0.7, 0.2, 0.1, PatternMode::SeededRandom);
        let n = 1_000_000u64;
        let s = generate_pulse_train(&cfg, n, 2024);
        let counts = s.class_counts();
        for (k, p) in [0.7, 0.2, 0.1].into_iter().enumerate() {
            let expect = n as f64 * p;
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (counts[k] as f64 - expect).abs() < 4.0 * sd,
                "class {k}: {} vs {expect} ± {sd}",
                counts[k]
            );
        }
    }

    #[test]
    fn deterministic_and_seed_dependent() {
        let cfg = source(0.5, 0.3, 0.2, PatternMode::SeededRandom);
        let a = generate_pulse_train(&cfg, 1000, 5);
        let b = generate_pulse_train(&cfg, 1000, 5);
        let c = generate_pulse_train(&cfg, 1000, 6);
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x == y));
        assert!(a.iter().zip(c.iter()).any(|(x, y)| x.class != y.class));
    }
}
