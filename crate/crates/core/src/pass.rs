//! Key yield of a satellite pass: the rate-vs-loss curve composed with the
//! loss-vs-time profile and integrated over time.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoy::DecoyError;
use crate::link::{pass_population, pass_profile, LinkBudgetParams, LinkError, PassProfile};
use crate::window::{log_widths, ClosedFormModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PassError {
    #[error("no key at the low end of the search bracket ({lo} dB)")]
    NoKeyAtLowEnd { lo: f64 },
    #[error("key rate still positive at the high end of the search bracket ({hi} dB)")]
    NoCutoffInBracket { hi: f64 },
    #[error("invalid loss grid: {0}")]
    Grid(String),
    #[error(transparent)]
    Decoy(#[from] DecoyError),
    #[error(transparent)]
    Link(#[from] LinkError),
}

impl PassError {
    /// The search bracket did not contain the zero-rate boundary.
    pub fn is_bracket(&self) -> bool {
        matches!(
            self,
            Self::NoKeyAtLowEnd { .. } | Self::NoCutoffInBracket { .. }
        )
    }
}

/// How the acceptance window is chosen at each loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WindowPolicy {
    /// Best width on a log grid of this many points, 20 ps to the full period.
    Optimal { points: usize },
    /// One width (seconds) everywhere.
    Fixed(f64),
}

impl Default for WindowPolicy {
    fn default() -> Self {
        Self::Optimal { points: 400 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub loss_db: f64,
    /// Secure key, bits per pulse.
    pub rate: f64,
    /// Window width used, seconds.
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCurve {
    /// Ordered by increasing loss.
    pub points: Vec<RatePoint>,
    pub clock_rate: f64,
}

impl RateCurve {
    /// Bits per pulse at `loss_db`.
    ///
    /// Between grid points the log of the rate is interpolated linearly in
    /// dB, falling back to linear interpolation next to a zero. Losses below
    /// the grid take the first point's rate; losses above it give zero.
    pub fn rate_at(&self, loss_db: f64) -> f64 {
        let p = &self.points;
        if p.is_empty() || loss_db > p[p.len() - 1].loss_db {
            return 0.0;
        }
        let i = p.partition_point(|x| x.loss_db < loss_db);
        if i == 0 {
            return p[0].rate;
        }
        let (a, b) = (&p[i - 1], &p[i]);
        if b.loss_db == a.loss_db {
            return b.rate;
        }
        let f = (loss_db - a.loss_db) / (b.loss_db - a.loss_db);
        if a.rate > 0.0 && b.rate > 0.0 {
            (a.rate.ln() + f * (b.rate.ln() - a.rate.ln())).exp()
        } else {
            a.rate + f * (b.rate - a.rate)
        }
    }

    pub fn rate_bps_at(&self, loss_db: f64) -> f64 {
        self.rate_at(loss_db) * self.clock_rate
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "loss_db,rate_bits_per_pulse,rate_bps,window_ns")?;
        for p in &self.points {
            writeln!(
                w,
                "{},{},{},{}",
                p.loss_db,
                p.rate,
                p.rate * self.clock_rate,
                p.width * 1e9
            )?;
        }
        Ok(())
    }
}

/// Evenly spaced losses from `min` to `max` inclusive.
pub fn loss_grid(min: f64, max: f64, step: f64) -> Result<Vec<f64>, PassError> {
    if !(step > 0.0 && max >= min && min.is_finite() && max.is_finite()) {
        return Err(PassError::Grid(format!(
            "min {min}, max {max}, step {step}"
        )));
    }
    let n = ((max - min) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| min + i as f64 * step).collect())
}

/// Secure rate at one loss under `policy`.
pub fn rate_at_loss(model: &ClosedFormModel, policy: WindowPolicy, loss_db: f64) -> RatePoint {
    let point = match policy {
        WindowPolicy::Optimal { points } => {
            let widths = log_widths(20e-12, model.period(), points.max(1));
            model.optimal(loss_db, &widths).0
        }
        WindowPolicy::Fixed(width) => model.point(loss_db, width),
    };
    RatePoint {
        loss_db,
        rate: point.secure_rate / model.params.clock_rate,
        width: point.width,
    }
}

pub fn rate_vs_loss(
    model: &ClosedFormModel,
    policy: WindowPolicy,
    grid: &[f64],
) -> Result<RateCurve, PassError> {
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(PassError::Grid("losses must be non-decreasing".into()));
    }
    model.params.validate()?;
    let points = grid
        .par_iter()
        .map(|&l| rate_at_loss(model, policy, l))
        .collect();
    Ok(RateCurve {
        points,
        clock_rate: model.params.clock_rate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KeyPoint {
    pub time: f64,
    pub loss_db: f64,
    pub rate_bps: f64,
    pub cumulative_bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PassKey {
    pub series: Vec<KeyPoint>,
    pub total_bits: f64,
}

impl PassKey {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time_s,loss_db,rate_bps,cumulative_bits")?;
        for p in &self.series {
            writeln!(
                w,
                "{},{},{},{}",
                p.time, p.loss_db, p.rate_bps, p.cumulative_bits
            )?;
        }
        Ok(())
    }
}

/// Key rate along the pass and its trapezoidal integral.
pub fn key_per_pass(profile: &PassProfile, curve: &RateCurve) -> PassKey {
    let mut series = Vec::with_capacity(profile.samples.len());
    let mut total = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for s in &profile.samples {
        let rate = curve.rate_bps_at(s.loss_db);
        if let Some((t0, r0)) = prev {
            total += 0.5 * (rate + r0) * (s.time - t0);
        }
        prev = Some((s.time, rate));
        series.push(KeyPoint {
            time: s.time,
            loss_db: s.loss_db,
            rate_bps: rate,
            cumulative_bits: total,
        });
    }
    PassKey {
        series,
        total_bits: total,
    }
}

/// Largest loss with positive key, by bisection to `resolution` dB inside
/// `[lo, hi]`.
pub fn max_tolerable_loss(
    model: &ClosedFormModel,
    policy: WindowPolicy,
    lo: f64,
    hi: f64,
    resolution: f64,
) -> Result<f64, PassError> {
    model.params.validate()?;
    let positive = |l: f64| rate_at_loss(model, policy, l).rate > 0.0;
    if !positive(lo) {
        return Err(PassError::NoKeyAtLowEnd { lo });
    }
    if positive(hi) {
        return Err(PassError::NoCutoffInBracket { hi });
    }
    let (mut lo, mut hi) = (lo, hi);
    while hi - lo > resolution {
        let mid = 0.5 * (lo + hi);
        if positive(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Summary over a synthetic pass population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PassStatistics {
    pub passes: usize,
    /// Share of passes that yield any key.
    pub usable_fraction: f64,
    /// Loss averaged over the key-producing part of each usable pass, then
    /// over usable passes.
    pub mean_usable_loss: f64,
}

pub fn pass_statistics(
    link: &LinkBudgetParams,
    curve: &RateCurve,
    passes: usize,
    time_step: f64,
) -> Result<PassStatistics, PassError> {
    let per_pass: Vec<Option<f64>> = pass_population(link, passes)
        .into_par_iter()
        .map(|el| {
            let prof = pass_profile(el, link, time_step)?;
            let usable: Vec<f64> = prof
                .samples
                .iter()
                .map(|s| s.loss_db)
                .filter(|&l| curve.rate_at(l) > 0.0)
                .collect();
            Ok((!usable.is_empty()).then(|| usable.iter().sum::<f64>() / usable.len() as f64))
        })
        .collect::<Result<_, LinkError>>()?;
    let usable: Vec<f64> = per_pass.iter().flatten().copied().collect();
    Ok(PassStatistics {
        passes,
        usable_fraction: usable.len() as f64 / passes.max(1) as f64,
        mean_usable_loss: if usable.is_empty() {
            f64::NAN
        } else {
            usable.iter().sum::<f64>() / usable.len() as f64
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn curve(points: &[(f64, f64)]) -> RateCurve {
        RateCurve {
            points: points
                .iter()
                .map(|&(loss_db, rate)| RatePoint {
                    loss_db,
                    rate,
                    width: 1e-9,
                })
                .collect(),
            clock_rate: 1e6,
        }
    }

    #[test]
    fn interpolates_log_rate_in_db() {
        let c = curve(&[(40.0, 1e-4), (50.0, 1e-6), (60.0, 0.0)]);
        assert!((c.rate_at(45.0) - 1e-5).abs() < 1e-18);
        assert!((c.rate_at(55.0) - 0.5e-6).abs() < 1e-18);
        assert_eq!(c.rate_at(61.0), 0.0);
        assert_eq!(c.rate_at(10.0), 1e-4);
    }

    #[test]
    fn constant_profile_integrates_exactly() {
        let c = curve(&[(30.0, 2e-4), (40.0, 2e-5)]);
        let prof = PassProfile::constant(35.0, 300.0, 7.0);
        let key = key_per_pass(&prof, &c);
        let expect = 300.0 * c.rate_bps_at(35.0);
        assert!((key.total_bits - expect).abs() <= 1e-9 * expect);
    }

    #[test]
    fn profile_beyond_cutoff_yields_nothing() {
        let c = curve(&[(30.0, 2e-4), (40.0, 0.0)]);
        let key = key_per_pass(&PassProfile::constant(45.0, 100.0, 1.0), &c);
        assert_eq!(key.total_bits, 0.0);
    }

    #[test]
    fn grid_is_inclusive() {
        let g = loss_grid(30.0, 62.0, 0.5).unwrap();
        assert_eq!(g.len(), 65);
        assert_eq!(*g.last().unwrap(), 62.0);
        assert!(loss_grid(5.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn bracket_errors() {
        let m = ClosedFormModel::from_calibration(&crate::calibration::experimental());
        let p = WindowPolicy::Optimal { points: 50 };
        assert!(max_tolerable_loss(&m, p, 70.0, 80.0, 0.1)
            .unwrap_err()
            .is_bracket());
        assert!(max_tolerable_loss(&m, p, 20.0, 30.0, 0.1)
            .unwrap_err()
            .is_bracket());
    }

    #[test]
    fn zero_loss_rate_is_bounded() {
        let m = ClosedFormModel::from_calibration(&crate::calibration::experimental());
        let r = rate_at_loss(&m, WindowPolicy::default(), 0.0).rate;
        assert!(r >= 0.0 && r <= m.params.q * m.params.p_signal);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn finer_sampling_changes_total_little(el in 20.0f64..90.0) {
            let cal = crate::calibration::experimental();
            let m = ClosedFormModel::from_calibration(&cal);
            let grid = loss_grid(30.0, 62.0, 0.5).unwrap();
            let c = rate_vs_loss(&m, WindowPolicy::Optimal { points: 100 }, &grid).unwrap();
            let coarse = key_per_pass(&pass_profile(el, &cal.link, 2.0).unwrap(), &c).total_bits;
            let fine = key_per_pass(&pass_profile(el, &cal.link, 1.0).unwrap(), &c).total_bits;
            prop_assert!((coarse - fine).abs() <= 0.01 * fine.max(1e-9), "{coarse} vs {fine}");
        }
    }
}
