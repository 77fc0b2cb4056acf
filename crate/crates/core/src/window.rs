//! Timing-window selection.
//!
//! Detections are folded onto the laser period; only those within `W / 2` of
//! the expected arrival are kept. A wider window keeps more signal but also
//! more background, whose count per second is
//!
//! ```text
//! C_errors = W r C_bkgd
//! ```
//!
//! The secure rate therefore peaks at an interior width whenever there is
//! background.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoy::{decoy_bounds, secure_key_rate, ChannelObservables, DecoyError, ProtocolParams};
use crate::photonics::{
    combined_jitter, tally, DetectorConfig, PulseClass, PulseSchedule, Timetag, TimingWindow,
    CLOCK_CHANNEL,
};

/// Background seen by the window: `rate_total` counts per second over all
/// time, `rep_rate` windows per second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundModel {
    pub rate_total: f64,
    pub rep_rate: f64,
}

impl BackgroundModel {
    pub fn new(detector: &DetectorConfig, rep_rate: f64) -> Self {
        Self {
            rate_total: detector.noise_rate(),
            rep_rate,
        }
    }
}

/// Background counts per second that fall inside the window. On average half
/// of them carry the wrong bit.
///
/// `width` is clamped to `[0, 1 / rep_rate]`.
pub fn background_error_count(width: f64, bg: &BackgroundModel) -> f64 {
    let width = width.clamp(0.0, 1.0 / bg.rep_rate);
    width * bg.rep_rate * bg.rate_total
}

/// Gaussian mass inside a centered window of full width `width`.
pub fn window_fraction(width: f64, sigma: f64) -> f64 {
    if width <= 0.0 {
        return 0.0;
    }
    if sigma <= 0.0 {
        return 1.0;
    }
    libm::erf(width / (2.0 * std::f64::consts::SQRT_2 * sigma))
}

/// Probability of at least one noise click in a window of `width` seconds.
pub fn noise_yield(width: f64, rate: f64) -> f64 {
    -(-(rate * width.max(0.0))).exp_m1()
}

/// `n` widths spaced evenly in log from `min` to `max`.
pub fn log_widths(min: f64, max: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![max],
        _ => {
            let step = (max / min).ln() / (n - 1) as f64;
            (0..n)
                .map(|i| {
                    if i == n - 1 {
                        max
                    } else {
                        min * (step * i as f64).exp()
                    }
                })
                .collect()
        }
    }
}

/// The standard grid: 50 widths from 20 ps to the full period.
pub fn default_widths(period: f64) -> Vec<f64> {
    log_widths(20e-12, period, 50)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowPoint {
    /// Window width, seconds.
    pub width: f64,
    /// In-window detections per second.
    pub raw_rate: f64,
    pub qber: f64,
    /// Secure key rate, bits per second.
    pub secure_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSweep {
    pub points: Vec<WindowPoint>,
    /// Index of the secure-rate maximum.
    pub optimum: usize,
    /// Every width gave zero secure rate; `optimum` is then the smallest width.
    pub degenerate: bool,
}

impl WindowSweep {
    fn from_points(points: Vec<WindowPoint>) -> Self {
        let (optimum, degenerate) = optimize_index(points.len(), |i| points[i].secure_rate);
        Self {
            points,
            optimum,
            degenerate,
        }
    }

    pub fn best(&self) -> WindowPoint {
        self.points[self.optimum]
    }

    pub fn widths(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.width).collect()
    }

    /// CSV with a `# config_hash` line, a column header and one row per width.
    pub fn write_csv<W: Write>(&self, mut w: W, config_hash: u64) -> io::Result<()> {
        writeln!(w, "# config_hash = {config_hash:016x}")?;
        writeln!(w, "width_ns,raw_rate_cps,qber,secure_rate_bps")?;
        for p in &self.points {
            writeln!(
                w,
                "{},{},{},{}",
                p.width * 1e9,
                p.raw_rate,
                p.qber,
                p.secure_rate
            )?;
        }
        Ok(())
    }
}

/// Index maximising `f` over `0..n`, ties toward the smaller index.
///
/// A coarse pass at stride `~sqrt(n)` brackets the peak and the bracket is
/// then scanned in full, so a unimodal curve costs `O(sqrt(n))` evaluations.
/// Returns `(0, true)` when the maximum is not positive.
pub fn optimize_index(n: usize, f: impl Fn(usize) -> f64) -> (usize, bool) {
    if n == 0 {
        return (0, true);
    }
    let stride = ((n as f64).sqrt().ceil() as usize).max(1);
    let mut best = (0, f(0));
    for i in (stride..n).step_by(stride).chain(std::iter::once(n - 1)) {
        let v = f(i);
        if v > best.1 {
            best = (i, v);
        }
    }
    let lo = best.0.saturating_sub(stride);
    let hi = (best.0 + stride).min(n - 1);
    let mut fine = (lo, f(lo));
    for i in lo + 1..=hi {
        let v = f(i);
        if v > fine.1 {
            fine = (i, v);
        }
    }
    if !(fine.1 > 0.0) {
        return (0, true);
    }
    (fine.0, false)
}

/// Closed-form window model: the in-window signal is the Gaussian
/// mass of the combined jitter, and background enters through `Y0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormModel {
    pub params: ProtocolParams,
    pub detector: DetectorConfig,
    pub source_jitter: f64,
}

impl ClosedFormModel {
    pub fn new(params: ProtocolParams, detector: DetectorConfig, source_jitter: f64) -> Self {
        Self {
            params,
            detector,
            source_jitter,
        }
    }

    pub fn from_calibration(cal: &crate::calibration::Calibration) -> Self {
        Self::new(cal.protocol, cal.detector, cal.source.source_jitter)
    }

    pub fn period(&self) -> f64 {
        1.0 / self.params.clock_rate
    }

    pub fn sigma(&self) -> f64 {
        combined_jitter(self.source_jitter, self.detector.jitter_sigma)
    }

    /// Expected observables at `loss_db` total loss (detector included).
    pub fn observables(&self, loss_db: f64, width: f64) -> Result<ChannelObservables, DecoyError> {
        let eta =
            crate::db_to_transmittance(loss_db).min(1.0) * window_fraction(width, self.sigma());
        let y0 = noise_yield(width, self.detector.noise_rate());
        ChannelObservables::from_model(&self.params, eta, y0)
    }

    pub fn point(&self, loss_db: f64, width: f64) -> WindowPoint {
        let r = self.params.clock_rate;
        let obs = self
            .observables(loss_db, width)
            .expect("model observables are in range");
        let secure = decoy_bounds(&self.params, &obs)
            .and_then(|b| secure_key_rate(&self.params, &obs, &b))
            .unwrap_or(0.0);
        let p = &self.params;
        WindowPoint {
            width,
            raw_rate: r * (p.p_signal * obs.q_mu + p.p_decoy * obs.q_nu + p.p_vacuum * obs.y_zero),
            qber: obs.e_mu,
            secure_rate: secure * r,
        }
    }

    pub fn sweep(&self, loss_db: f64, widths: &[f64]) -> WindowSweep {
        let points = widths.par_iter().map(|&w| self.point(loss_db, w)).collect();
        WindowSweep::from_points(points)
    }

    /// Best width on `widths` without evaluating the whole grid.
    pub fn optimal(&self, loss_db: f64, widths: &[f64]) -> (WindowPoint, bool) {
        let (i, degenerate) =
            optimize_index(widths.len(), |i| self.point(loss_db, widths[i]).secure_rate);
        (self.point(loss_db, widths[i]), degenerate)
    }
}

/// Per-section histogram of arrival phase modulo `period`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldedHistogram {
    /// Section start, seconds.
    pub start: f64,
    pub counts: Vec<u64>,
}

impl FoldedHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Fold an aligned stream onto the pulse period, one histogram per section.
///
/// The bin count is `round(period / bin_width)`, so bins tile the period
/// exactly. Bin 0 starts at phase 0 (the nominal emission time).
pub fn fold_histogram(
    stream: &[Timetag],
    tick_resolution: f64,
    period: f64,
    bin_width: f64,
    section_length: f64,
) -> Vec<FoldedHistogram> {
    let bins = ((period / bin_width).round() as usize).max(1);
    let mut out: Vec<FoldedHistogram> = Vec::new();
    for tag in stream.iter().filter(|t| t.channel != CLOCK_CHANNEL) {
        let t = tag.tick as f64 * tick_resolution;
        let section = (t / section_length).floor() as usize;
        while out.len() <= section {
            out.push(FoldedHistogram {
                start: out.len() as f64 * section_length,
                counts: vec![0; bins],
            });
        }
        let phase = t.rem_euclid(period) / period;
        let b = ((phase * bins as f64) as usize).min(bins - 1);
        out[section].counts[b] += 1;
    }
    out
}

/// Arrival offset of the signal peak relative to the nominal emission time,
/// in `(-period/2, period/2]`: the centroid of events near the fullest bin.
pub fn peak_centroid(stream: &[Timetag], tick_resolution: f64, period: f64) -> f64 {
    const BINS: usize = 64;
    const HALF_SPAN: f64 = 4.0;
    let phases: Vec<f64> = stream
        .iter()
        .filter(|t| t.channel != CLOCK_CHANNEL)
        .map(|t| (t.tick as f64 * tick_resolution).rem_euclid(period))
        .collect();
    if phases.is_empty() {
        return 0.0;
    }
    let mut counts = [0u64; BINS];
    for &p in &phases {
        counts[((p / period * BINS as f64) as usize).min(BINS - 1)] += 1;
    }
    let peak = (0..BINS)
        .max_by_key(|&b| (counts[b], std::cmp::Reverse(b)))
        .unwrap_or(0);
    let bin = period / BINS as f64;
    let center = (peak as f64 + 0.5) * bin;
    let (mut sum, mut n) = (0.0, 0u64);
    for &p in &phases {
        let d = p - center - period * ((p - center) / period).round();
        if d.abs() <= HALF_SPAN * bin {
            sum += d;
            n += 1;
        }
    }
    let c = center + sum / n.max(1) as f64;
    c - period * (c / period).round()
}

/// Sweep window widths over a simulated (or measured and aligned) stream.
///
/// Each window is centered on the stream's peak centroid; rates are per
/// second of schedule span.
pub fn sweep_stream(
    stream: &[Timetag],
    schedule: &PulseSchedule,
    tick_resolution: f64,
    widths: &[f64],
    params: &ProtocolParams,
) -> WindowSweep {
    let center = peak_centroid(stream, tick_resolution, schedule.period());
    let span = schedule.span();
    let points = widths
        .par_iter()
        .map(|&width| {
            let t = tally(
                stream,
                schedule,
                TimingWindow { center, width },
                tick_resolution,
            );
            let rate = t.key_rate(params).unwrap_or(0.0);
            WindowPoint {
                width,
                raw_rate: t.total_detected() as f64 / span,
                qber: t.qber(PulseClass::Signal),
                secure_rate: rate * params.clock_rate,
            }
        })
        .collect();
    WindowSweep::from_points(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn background_error_examples() {
        let bg = BackgroundModel {
            rate_total: 1000.0,
            rep_rate: 76e6,
        };
        assert_eq!(background_error_count(0.0, &bg), 0.0);
        assert!((background_error_count(1e-9, &bg) - 76.0).abs() < 1e-9);
        assert!((background_error_count(1.0 / 76e6, &bg) - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn grid_spans_period() {
        let w = default_widths(13e-9);
        assert_eq!(w.len(), 50);
        assert!((w[0] - 20e-12).abs() < 1e-24);
        assert_eq!(*w.last().unwrap(), 13e-9);
        assert!(w.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn fraction_limits() {
        assert_eq!(window_fraction(0.0, 1e-10), 0.0);
        assert_eq!(window_fraction(1e-9, 0.0), 1.0);
        // +-1 sigma
        assert!((window_fraction(2.0, 1.0) - 0.682_689_492_137_086).abs() < 1e-12);
    }

    #[test]
    fn all_zero_sweep_is_degenerate() {
        let cal = crate::calibration::experimental();
        let m = ClosedFormModel::from_calibration(&cal);
        let s = m.sweep(90.0, &default_widths(m.period()));
        assert!(s.degenerate);
        assert_eq!(s.optimum, 0);
    }

    #[test]
    fn ties_go_to_smaller_index() {
        let v = [0.0, 1.0, 3.0, 3.0, 2.0];
        assert_eq!(optimize_index(v.len(), |i| v[i]), (2, false));
    }

    fn brute(values: &[f64]) -> usize {
        let mut best = 0;
        for (i, &v) in values.iter().enumerate() {
            if v > values[best] {
                best = i;
            }
        }
        best
    }

    #[test]
    fn optimizer_matches_brute_force_on_random_configs() {
        use rand::Rng;
        let mut rng = crate::rng::substream(2024, 0);
        let base = crate::calibration::experimental();
        for _ in 0..20 {
            let mut m = ClosedFormModel::from_calibration(&base);
            m.params.mu = rng.random_range(0.3..0.9);
            m.params.nu = rng.random_range(0.05..0.25);
            m.params.e_detector = rng.random_range(0.005..0.04);
            m.detector.background_rate = rng.random_range(0.0..2000.0);
            m.source_jitter = rng.random_range(30e-12..400e-12);
            let loss = rng.random_range(25.0..56.0);
            let widths = log_widths(20e-12, m.period(), 200);
            let sweep = m.sweep(loss, &widths);
            let rates: Vec<f64> = sweep.points.iter().map(|p| p.secure_rate).collect();
            assert_eq!(sweep.optimum, brute(&rates), "loss {loss}");
            assert_eq!(m.optimal(loss, &widths).0, sweep.best());
        }
    }

    #[test]
    fn fold_splits_sections() {
        let tags: Vec<Timetag> = (0..10)
            .map(|k| Timetag {
                tick: k * 1000,
                channel: 0,
                truth: crate::photonics::Truth::Dark,
            })
            .collect();
        let h = fold_histogram(&tags, 1e-9, 13e-9, 1e-9, 5e-6);
        assert_eq!(h.len(), 2);
        assert_eq!(h[0].counts.len(), 13);
        assert_eq!(h[0].total() + h[1].total(), 10);
    }

    proptest! {
        #[test]
        fn background_count_linear(w in 0.0f64..1e-8, c in 0.0f64..1e4) {
            let bg = BackgroundModel { rate_total: c, rep_rate: 76e6 };
            let twice = BackgroundModel { rate_total: 2.0 * c, rep_rate: 76e6 };
            let a = background_error_count(w, &bg);
            prop_assert!((background_error_count(w, &twice) - 2.0 * a).abs() <= 1e-9 * a.max(1.0));
            prop_assert!((background_error_count(w / 2.0, &bg) - a / 2.0).abs() <= 1e-9 * a.max(1.0));
        }

        #[test]
        fn closed_form_raw_rate_and_qber_monotone(loss in 30.0f64..57.0) {
            let m = ClosedFormModel::from_calibration(&crate::calibration::experimental());
            let s = m.sweep(loss, &default_widths(m.period()));
            for p in s.points.windows(2) {
                prop_assert!(p[1].raw_rate >= p[0].raw_rate);
            }
            // above the jitter width, QBER grows with the window
            let wide: Vec<_> = s.points.iter().filter(|p| p.width > 3.0 * m.sigma()).collect();
            for p in wide.windows(2) {
                prop_assert!(p[1].qber >= p[0].qber - 1e-15);
            }
        }
    }
}
