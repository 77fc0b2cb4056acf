use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SyncError;
use crate::photonics::Timetag;

/// A detection as seen by the alignment: a time and nothing else. Bit and
/// basis values never enter synchronisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DetectionTime {
    pub tick: u64,
}

impl From<&Timetag> for DetectionTime {
    fn from(t: &Timetag) -> Self {
        Self { tick: t.tick }
    }
}

pub fn detection_times(stream: &[Timetag]) -> Vec<DetectionTime> {
    stream.iter().map(DetectionTime::from).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    /// Length of each independently fitted section, seconds.
    pub section_length: f64,
    /// Phase bins of the folded coincidence histogram.
    pub bins: usize,
    /// Largest residual fractional rate searched, either sign.
    pub max_rate: f64,
    /// Minimum peak significance, in standard deviations of a bin count.
    pub min_significance: f64,
    /// Events per section used by the coarse search; the refinement uses all.
    pub search_events: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            section_length: 1.0,
            bins: 8,
            max_rate: 2e-6,
            min_significance: 5.0,
            search_events: 4000,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<(), SyncError> {
        let checks: [(&'static str, f64, bool, &'static str); 5] = [
            (
                "section_length",
                self.section_length,
                self.section_length > 0.0,
                "> 0",
            ),
            ("bins", self.bins as f64, self.bins >= 2, ">= 2"),
            (
                "max_rate",
                self.max_rate,
                (0.0..1e-3).contains(&self.max_rate),
                "[0, 1e-3)",
            ),
            (
                "min_significance",
                self.min_significance,
                self.min_significance >= 0.0,
                ">= 0",
            ),
            (
                "search_events",
                self.search_events as f64,
                self.search_events >= 16,
                ">= 16",
            ),
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
}

/// Fit of one section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SectionFit {
    /// Section start, seconds of Bob's time after removing time of flight.
    pub start: f64,
    /// Offset to subtract from Bob's time at `start`, seconds.
    pub offset: f64,
    /// Rate of Alice's clock relative to Bob's over the section.
    pub scale: f64,
    /// Height of the coincidence peak above the mean bin, in standard
    /// deviations.
    pub significance: f64,
    pub events: usize,
    /// Share of the section's events inside the fitted peak.
    pub peak_fraction: f64,
    /// Share of truth-labelled signal events recovered, when scored.
    pub matched_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentResult {
    /// Bob's events in Alice's nominal pulse-grid time base, as ticks, in
    /// input order.
    pub corrected: Vec<u64>,
    pub sections: Vec<SectionFit>,
    /// Standard deviation of in-peak corrected events about the pulse grid,
    /// seconds.
    pub residual_spread: f64,
    pub peak_fraction: f64,
    /// Standard deviation of the truth-labelled events about the pulse grid,
    /// seconds. Set by [`score`](Self::score); unlike `residual_spread` it is
    /// not truncated by the peak gate.
    pub signal_spread: Option<f64>,
    #[serde(skip)]
    grid_phase: Vec<f64>,
    #[serde(skip)]
    period: f64,
    #[serde(skip)]
    section_of: Vec<u32>,
}

impl AlignmentResult {
    /// Fraction of events with an expected tick whose corrected tick is
    /// within one tick of it. Entries with `None` are ignored.
    pub fn matched_fraction(&self, expected: &[Option<u64>]) -> f64 {
        let (mut hit, mut n) = (0u64, 0u64);
        for (c, e) in self.corrected.iter().zip(expected) {
            if let Some(e) = e {
                n += 1;
                hit += (c.abs_diff(*e) <= 1) as u64;
            }
        }
        if n == 0 {
            1.0
        } else {
            hit as f64 / n as f64
        }
    }

    /// Fill in per-section matched fractions and the signal spread.
    pub fn score(&mut self, expected: &[Option<u64>]) {
        let phases: Vec<f64> = self
            .grid_phase
            .iter()
            .zip(expected)
            .filter(|(_, e)| e.is_some())
            .map(|(&p, _)| p)
            .collect();
        self.signal_spread = circular_spread(&phases).map(|s| s * self.period);
        let mut hit = vec![0u64; self.sections.len()];
        let mut n = vec![0u64; self.sections.len()];
        for ((c, e), &s) in self.corrected.iter().zip(expected).zip(&self.section_of) {
            if let Some(e) = e {
                n[s as usize] += 1;
                hit[s as usize] += (c.abs_diff(*e) <= 1) as u64;
            }
        }
        for (k, sec) in self.sections.iter_mut().enumerate() {
            sec.matched_fraction = Some(if n[k] == 0 {
                1.0
            } else {
                hit[k] as f64 / n[k] as f64
            });
        }
    }

    /// Per-section diagnostics as CSV.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "section_start_s,offset_ns,scale,significance,peak_fraction,matched_fraction"
        )?;
        for s in &self.sections {
            let matched = s.matched_fraction.map_or(String::new(), |m| m.to_string());
            writeln!(
                w,
                "{},{},{},{},{},{}",
                s.start,
                s.offset * 1e9,
                s.scale,
                s.significance,
                s.peak_fraction,
                matched
            )?;
        }
        Ok(())
    }
}

/// Spread of phases in pulse units, measured about their circular mean.
fn circular_spread(phases: &[f64]) -> Option<f64> {
    if phases.is_empty() {
        return None;
    }
    let tau = std::f64::consts::TAU;
    let (s, c) = phases.iter().fold((0.0, 0.0), |(s, c), p| {
        (s + (tau * p).sin(), c + (tau * p).cos())
    });
    let center = s.atan2(c) / tau;
    let n = phases.len() as f64;
    let var = phases
        .iter()
        .map(|p| wrap_half(p - center).powi(2))
        .sum::<f64>()
        / n;
    Some(var.sqrt())
}

/// Pulse coordinate from Alice's clock tags: tag `j` marks pulse `j * D`.
struct ClockMap<'a> {
    tags: &'a [f64],
    divide: f64,
}

impl ClockMap<'_> {
    fn interval(&self, tau: f64) -> usize {
        let i = self.tags.partition_point(|&c| c <= tau);
        i.saturating_sub(1).min(self.tags.len() - 2)
    }

    /// Pulse coordinate at Alice time `tau` and its slope in pulses/second.
    fn phi(&self, tau: f64) -> (f64, f64) {
        let j = self.interval(tau);
        let (a, b) = (self.tags[j], self.tags[j + 1]);
        let slope = self.divide / (b - a);
        (j as f64 * self.divide + (tau - a) * slope, slope)
    }
}

/// Clock tag times with their quantisation noise averaged down by a short
/// centred moving average, which leaves any locally linear trend unchanged.
fn smooth_tags(tags: &[DetectionTime], tick_resolution: f64) -> Vec<f64> {
    const HALF: usize = 8;
    let n = tags.len();
    (0..n)
        .map(|j| {
            let k = HALF.min(j).min(n - 1 - j);
            let c = tags[j].tick as i64;
            let sum: i64 = (j - k..=j + k).map(|i| tags[i].tick as i64 - c).sum();
            (c as f64 + sum as f64 / (2 * k + 1) as f64) * tick_resolution
        })
        .collect()
}

/// Emission time `t` solving `t + tof(t) = tau`.
fn remove_flight_time(tau: f64, tof: &(impl Fn(f64) -> f64 + ?Sized)) -> f64 {
    let mut t = tau - tof(tau);
    for _ in 0..4 {
        t = tau - tof(t);
    }
    t
}

fn wrap_half(x: f64) -> f64 {
    x - x.round()
}

struct Coarse {
    rate: f64,
    phase: f64,
    significance: f64,
}

/// Grid search over residual rate; the phase is the fullest histogram bin.
fn coarse_search(
    phi: &[f64],
    slope: &[f64],
    x: &[f64],
    cfg: &AlignConfig,
    pulses: f64,
    stride: usize,
) -> Coarse {
    let bins = cfg.bins;
    let step = 0.5 / (bins as f64 * pulses.max(1.0));
    let k_max = (cfg.max_rate / step).ceil() as i64;
    let idx: Vec<usize> = (0..phi.len()).step_by(stride.max(1)).collect();
    let n = idx.len() as f64;
    let (count, k, bin) = (-k_max..=k_max)
        .into_par_iter()
        .map(|k| {
            let rho = k as f64 * step;
            let mut h = vec![0u32; bins];
            for &i in &idx {
                let f = (phi[i] + slope[i] * rho * x[i]).rem_euclid(1.0);
                h[((f * bins as f64) as usize).min(bins - 1)] += 1;
            }
            let (b, c) = h
                .iter()
                .enumerate()
                .fold((0, 0), |acc, (b, &c)| if c > acc.1 { (b, c) } else { acc });
            (c, k, b)
        })
        .reduce(
            || (0, 0, 0),
            |a, b| {
                // larger peak, then smaller |rate|, then smaller rate
                let key = |v: &(u32, i64, usize)| {
                    (v.0, std::cmp::Reverse(v.1.abs()), std::cmp::Reverse(v.1))
                };
                if key(&b) > key(&a) {
                    b
                } else {
                    a
                }
            },
        );
    let mean = n / bins as f64;
    Coarse {
        rate: k as f64 * step,
        phase: (bin as f64 + 0.5) / bins as f64,
        significance: if mean > 0.0 {
            (count as f64 - mean) / mean.sqrt()
        } else {
            0.0
        },
    }
}

/// Least-squares refinement of (phase, rate) on events near the peak.
fn refine(
    phi: &[f64],
    slope: &[f64],
    x: &[f64],
    mut phase: f64,
    mut rate: f64,
    first_gate: f64,
    floor_gate: f64,
) -> (f64, f64, f64, usize) {
    let mut gate = first_gate;
    let mut rms = first_gate;
    let mut kept = 0;
    for _ in 0..3 {
        let (mut s, mut sx, mut sy, mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let mut g = 0.0;
        for i in 0..phi.len() {
            let d = wrap_half(phi[i] + slope[i] * rate * x[i] - phase);
            if d.abs() <= gate {
                s += 1.0;
                sx += x[i];
                sy += d;
                sxx += x[i] * x[i];
                sxy += x[i] * d;
                syy += d * d;
                g += slope[i];
            }
        }
        if s < 2.0 {
            break;
        }
        let var_x = sxx - sx * sx / s;
        let b = if var_x > 0.0 {
            (sxy - sx * sy / s) / var_x
        } else {
            0.0
        };
        let a = (sy - b * sx) / s;
        rate -= b / (g / s);
        phase += a;
        let resid =
            (syy - 2.0 * a * sy - 2.0 * b * sxy + a * a * s + 2.0 * a * b * sx + b * b * sxx) / s;
        rms = resid.max(0.0).sqrt();
        gate = (3.0 * rms).max(floor_gate).min(first_gate);
        kept = s as usize;
    }
    (phase, rate, rms, kept)
}

/// Align Bob's detections to Alice's pulse grid.
///
/// `alice_clock` holds Alice's divided-clock tags (tag `j` marks pulse
/// `j * divide_ratio`) and `period` is her nominal laser period; `tof` is the one-way flight time as a function of
/// emission time. Each section is fitted on its own: a coarse search over
/// residual rate with the phase read from a folded histogram, then a
/// least-squares refinement on in-peak events. The integer pulse offset of
/// the first section is taken as the one nearest zero at time zero, and
/// later sections continue it.
pub fn align_timetags(
    bob: &[DetectionTime],
    alice_clock: &[DetectionTime],
    divide_ratio: u64,
    period: f64,
    tick_resolution: f64,
    tof: impl Fn(f64) -> f64 + Sync,
    cfg: &AlignConfig,
) -> Result<AlignmentResult, SyncError> {
    cfg.validate()?;
    if !(period > 0.0 && period.is_finite()) {
        return Err(SyncError::Domain {
            name: "period",
            value: period,
            expected: "> 0",
        });
    }
    if alice_clock.len() < 2 {
        return Err(SyncError::NoClock);
    }
    if bob.is_empty() {
        return Err(SyncError::Empty);
    }
    let tags = smooth_tags(alice_clock, tick_resolution);
    let clock = ClockMap {
        tags: &tags,
        divide: divide_ratio as f64,
    };

    let u: Vec<f64> = bob
        .par_iter()
        .map(|d| remove_flight_time(d.tick as f64 * tick_resolution, &tof))
        .collect();
    let (phi, slope): (Vec<f64>, Vec<f64>) = u.par_iter().map(|&t| clock.phi(t)).unzip();

    let l = cfg.section_length;
    let u_max = u.iter().copied().fold(0.0, f64::max);
    let n_sections = ((u_max / l).round() as usize).max(1);
    let section_of: Vec<u32> = u
        .iter()
        .map(|&t| ((t / l).floor().max(0.0) as usize).min(n_sections - 1) as u32)
        .collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_sections];
    for (i, &s) in section_of.iter().enumerate() {
        members[s as usize].push(i);
    }

    struct Local {
        phase: f64,
        rate: f64,
        mid: f64,
        significance: f64,
        kept: usize,
        rms: f64,
    }
    let fits: Vec<Result<Local, SyncError>> = members
        .par_iter()
        .enumerate()
        .map(|(s, idx)| {
            let start = s as f64 * l;
            let end = if s + 1 == n_sections {
                u_max.max(start + l)
            } else {
                start + l
            };
            let mid = 0.5 * (start + end);
            let p: Vec<f64> = idx.iter().map(|&i| phi[i]).collect();
            let g: Vec<f64> = idx.iter().map(|&i| slope[i]).collect();
            let x: Vec<f64> = idx.iter().map(|&i| u[i] - mid).collect();
            let stride = idx.len().div_ceil(cfg.search_events);
            let coarse = coarse_search(&p, &g, &x, cfg, (end - start) / period, stride);
            if !(coarse.significance >= cfg.min_significance) {
                return Err(SyncError::SyncLost {
                    section: s,
                    start,
                    significance: coarse.significance,
                });
            }
            let first_gate = 1.0 / cfg.bins as f64;
            let floor_gate = 2.0 * tick_resolution / period;
            let (phase, rate, rms, kept) = refine(
                &p,
                &g,
                &x,
                coarse.phase,
                coarse.rate,
                first_gate,
                floor_gate,
            );
            Ok(Local {
                phase,
                rate,
                mid,
                significance: coarse.significance,
                kept,
                rms,
            })
        })
        .collect();
    let fits: Vec<Local> = fits.into_iter().collect::<Result<_, _>>()?;

    // Offset in pulses to subtract from phi at Bob time t: O(t) = theta - g rho (t - mid).
    let inv_period = 1.0 / period;
    let mut theta = Vec::with_capacity(n_sections);
    for (s, f) in fits.iter().enumerate() {
        let boundary = s as f64 * l;
        let own = f.phase - inv_period * f.rate * (boundary - f.mid);
        let target = if s == 0 {
            0.0
        } else {
            let prev: &Local = &fits[s - 1];
            let th: f64 = theta[s - 1];
            th - inv_period * prev.rate * (boundary - prev.mid)
        };
        theta.push(f.phase + (target - own).round());
    }

    let (corrected, grid_phase): (Vec<u64>, Vec<f64>) = (0..u.len())
        .into_par_iter()
        .map(|i| {
            let s = section_of[i] as usize;
            let f = &fits[s];
            let pc = phi[i] + slope[i] * f.rate * (u[i] - f.mid) - theta[s];
            let t = pc * period;
            (
                ((t + tof(t)) / tick_resolution).round().max(0.0) as u64,
                wrap_half(pc),
            )
        })
        .unzip();

    let sections: Vec<SectionFit> = fits
        .iter()
        .enumerate()
        .map(|(s, f)| {
            let start = s as f64 * l;
            SectionFit {
                start,
                offset: (theta[s] - inv_period * f.rate * (start - f.mid)) * period,
                scale: 1.0 + f.rate,
                significance: f.significance,
                events: members[s].len(),
                peak_fraction: f.kept as f64 / members[s].len().max(1) as f64,
                matched_fraction: None,
            }
        })
        .collect();
    let kept: usize = fits.iter().map(|f| f.kept).sum();
    let spread = (fits
        .iter()
        .map(|f| f.rms * f.rms * f.kept as f64)
        .sum::<f64>()
        / kept.max(1) as f64)
        .sqrt()
        * period;
    Ok(AlignmentResult {
        corrected,
        sections,
        residual_spread: spread,
        signal_spread: None,
        grid_phase,
        period,
        peak_fraction: kept as f64 / bob.len() as f64,
        section_of,
    })
}
