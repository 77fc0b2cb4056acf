use std::io::{self, Write};

use serde::Serialize;

use super::{LinkBudgetParams, LinkError};

/// Standard gravitational parameter of the Earth, m^3 s^-2.
pub const EARTH_GM: f64 = 3.986_004_418e14;
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Slant range to a satellite at `altitude` seen at `elevation_deg`.
pub fn range_from_elevation(
    elevation_deg: f64,
    altitude: f64,
    earth_radius: f64,
) -> Result<f64, LinkError> {
    if !(0.0..=90.0).contains(&elevation_deg) {
        return Err(LinkError::Domain {
            name: "elevation",
            value: elevation_deg,
            expected: "[0, 90] deg",
        });
    }
    let el = elevation_deg.to_radians();
    let (re, rs) = (earth_radius, earth_radius + altitude);
    let c = re * el.cos();
    Ok((rs * rs - c * c).sqrt() - re * el.sin())
}

/// Beam-spread loss at range `range`; 0 dB once the beam fits the aperture.
pub fn geometric_loss_db(range: f64, p: &LinkBudgetParams) -> f64 {
    let beam = p.tx_diameter + 2.0 * p.divergence_half_angle * range;
    let captured = (p.rx_diameter / beam).powi(2).min(1.0);
    -10.0 * captured.log10()
}

/// Airmass-scaled absorption, with the airmass frozen below 10 deg.
pub fn atmospheric_loss_db(elevation_deg: f64, p: &LinkBudgetParams) -> f64 {
    p.zenith_atm_loss / elevation_deg.max(10.0).to_radians().sin()
}

/// Total loss in dB at `elevation_deg`, receiver and detector included.
pub fn total_loss(elevation_deg: f64, p: &LinkBudgetParams) -> Result<f64, LinkError> {
    let range = range_from_elevation(elevation_deg, p.altitude, p.earth_radius)?;
    Ok(geometric_loss_db(range, p)
        + atmospheric_loss_db(elevation_deg, p)
        + p.pointing_loss
        + p.system_loss)
}

/// Earth-central angle between station and sub-satellite point at a given
/// elevation, radians.
pub fn central_angle_from_elevation(elevation_deg: f64, p: &LinkBudgetParams) -> f64 {
    let el = elevation_deg.to_radians();
    let k = p.earth_radius / (p.earth_radius + p.altitude);
    (k * el.cos()).acos() - el
}

/// Elevation in degrees for an Earth-central angle in radians.
pub fn elevation_from_central_angle(angle: f64, p: &LinkBudgetParams) -> f64 {
    let k = p.earth_radius / (p.earth_radius + p.altitude);
    (angle.cos() - k).atan2(angle.sin()).to_degrees()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PassSample {
    /// Seconds since the satellite rose above the horizon mask.
    pub time: f64,
    pub elevation: f64,
    /// Slant range, metres.
    pub range: f64,
    pub loss_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PassProfile {
    pub samples: Vec<PassSample>,
    pub max_elevation: f64,
}

impl PassProfile {
    /// A profile held at one loss for `duration` seconds.
    pub fn constant(loss_db: f64, duration: f64, time_step: f64) -> Self {
        let n = (duration / time_step).ceil().max(1.0) as usize;
        let samples = (0..=n)
            .map(|i| PassSample {
                time: (i as f64 * time_step).min(duration),
                elevation: 90.0,
                range: 0.0,
                loss_db,
            })
            .collect();
        Self {
            samples,
            max_elevation: 90.0,
        }
    }

    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.time - a.time,
            _ => 0.0,
        }
    }

    pub fn min_loss(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.loss_db)
            .fold(f64::INFINITY, f64::min)
    }

    /// One-way time of flight at `time`, linearly interpolated in range.
    pub fn time_of_flight(&self, time: f64) -> f64 {
        let s = &self.samples;
        if s.is_empty() {
            return 0.0;
        }
        let i = s.partition_point(|x| x.time <= time);
        let range = if i == 0 {
            s[0].range
        } else if i == s.len() {
            s[s.len() - 1].range
        } else {
            let (a, b) = (&s[i - 1], &s[i]);
            a.range + (b.range - a.range) * (time - a.time) / (b.time - a.time)
        };
        range / SPEED_OF_LIGHT
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time_s,elevation_deg,range_km,loss_db")?;
        for s in &self.samples {
            writeln!(
                w,
                "{},{},{},{}",
                s.time,
                s.elevation,
                s.range / 1e3,
                s.loss_db
            )?;
        }
        Ok(())
    }
}

/// Circular-orbit pass through the point of closest approach, sampled every
/// `time_step` seconds from rise to set above `min_elevation`.
///
/// The sub-satellite track is a great circle, so the central angle to the
/// station follows `cos l(t) = cos l0 cos(w t)` with `w` the orbital rate.
/// Samples are placed symmetrically about closest approach.
pub fn pass_profile(
    max_elevation_deg: f64,
    p: &LinkBudgetParams,
    time_step: f64,
) -> Result<PassProfile, LinkError> {
    p.validate()?;
    if !(max_elevation_deg > 0.0 && max_elevation_deg <= 90.0) {
        return Err(LinkError::Domain {
            name: "max_elevation",
            value: max_elevation_deg,
            expected: "(0, 90] deg",
        });
    }
    if !(time_step > 0.0) {
        return Err(LinkError::Domain {
            name: "time_step",
            value: time_step,
            expected: "> 0",
        });
    }
    if max_elevation_deg < p.min_elevation {
        return Err(LinkError::NoPass {
            max_elevation: max_elevation_deg,
            min_elevation: p.min_elevation,
        });
    }
    let omega = (EARTH_GM / (p.earth_radius + p.altitude).powi(3)).sqrt();
    let l0 = central_angle_from_elevation(max_elevation_deg, p).max(0.0);
    let l_mask = central_angle_from_elevation(p.min_elevation, p);
    let half = ((l_mask.cos() / l0.cos()).clamp(-1.0, 1.0)).acos() / omega;

    let k = (half / time_step).floor() as i64;
    let mut offsets: Vec<f64> = (-k..=k).map(|i| i as f64 * time_step).collect();
    if half - k as f64 * time_step > 1e-9 * time_step {
        offsets.insert(0, -half);
        offsets.push(half);
    }
    let samples = offsets
        .into_iter()
        .map(|t| {
            let angle = (l0.cos() * (omega * t).cos()).clamp(-1.0, 1.0).acos();
            let elevation = elevation_from_central_angle(angle, p).clamp(0.0, 90.0);
            let range = range_from_elevation(elevation, p.altitude, p.earth_radius)?;
            let loss_db = geometric_loss_db(range, p)
                + atmospheric_loss_db(elevation, p)
                + p.pointing_loss
                + p.system_loss;
            Ok(PassSample {
                time: t + half,
                elevation,
                range,
                loss_db,
            })
        })
        .collect::<Result<Vec<_>, LinkError>>()?;
    Ok(PassProfile {
        samples,
        max_elevation: max_elevation_deg,
    })
}

/// Maximum elevations of `n` synthetic passes whose closest-approach central
/// angle is spread evenly over `[0, l(min_elevation)]`, best pass first.
pub fn pass_population(p: &LinkBudgetParams, n: usize) -> Vec<f64> {
    let l_mask = central_angle_from_elevation(p.min_elevation, p);
    (0..n)
        .map(|i| elevation_from_central_angle((i as f64 + 0.5) / n as f64 * l_mask, p))
        .collect()
}

/// Maximum elevation of the pass that beats `percentile` of the synthetic
/// population (80 gives the pass ranked at the top fifth).
pub fn percentile_pass_elevation(p: &LinkBudgetParams, percentile: f64) -> f64 {
    let l_mask = central_angle_from_elevation(p.min_elevation, p);
    let frac = (1.0 - percentile / 100.0).clamp(0.0, 1.0);
    elevation_from_central_angle(frac * l_mask, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> LinkBudgetParams {
        LinkBudgetParams::default()
    }

    #[test]
    fn range_examples() {
        assert!((range_from_elevation(90.0, 600e3, 6371e3).unwrap() - 600e3).abs() < 1e-6);
        // closed form at 0 deg: sqrt((Re+h)^2 - Re^2)
        let horizon = range_from_elevation(0.0, 600e3, 6371e3).unwrap();
        assert!((horizon - 2_829_346.214_233_953).abs() < 1e-6, "{horizon}");
        assert!(range_from_elevation(-1.0, 600e3, 6371e3).is_err());
        assert!(range_from_elevation(91.0, 600e3, 6371e3).is_err());
    }

    #[test]
    fn geometric_examples() {
        let mut p = params();
        p.divergence_half_angle = 10e-6;
        // (0.3 / 20.25)^2
        assert!((geometric_loss_db(1000e3, &p) - 36.586_075_456_620_5).abs() < 1e-9);
        p.divergence_half_angle = 0.0;
        p.rx_diameter = 0.3;
        p.tx_diameter = 0.25;
        assert_eq!(geometric_loss_db(1000e3, &p), 0.0);
    }

    #[test]
    fn overhead_pass_reaches_altitude() {
        let p = params();
        let prof = pass_profile(90.0, &p, 1.0).unwrap();
        let min = prof
            .samples
            .iter()
            .map(|s| s.range)
            .fold(f64::INFINITY, f64::min);
        assert!((min - p.altitude).abs() < 1.0);
        assert!((prof.min_loss() - total_loss(90.0, &p).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn below_mask_is_rejected() {
        assert!(matches!(
            pass_profile(5.0, &params(), 1.0),
            Err(LinkError::NoPass { .. })
        ));
    }

    #[test]
    fn percentile_pass_is_moderate() {
        let el = percentile_pass_elevation(&params(), 80.0);
        assert!((el - 56.8).abs() < 0.5, "{el}");
        assert!((percentile_pass_elevation(&params(), 100.0) - 90.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn range_decreases_with_elevation(a in 0.0f64..89.9, d in 0.01f64..10.0) {
            let b = (a + d).min(90.0);
            let ra = range_from_elevation(a, 600e3, 6371e3).unwrap();
            let rb = range_from_elevation(b, 600e3, 6371e3).unwrap();
            prop_assert!(rb < ra);
        }

        #[test]
        fn loss_non_increasing_with_elevation(a in 10.0f64..89.0, d in 0.01f64..1.0) {
            let p = params();
            prop_assert!(total_loss(a + d, &p).unwrap() <= total_loss(a, &p).unwrap() + 1e-12);
        }

        #[test]
        fn geometric_loss_never_negative(r in 0.0f64..5e6, div in 0.0f64..1e-4) {
            let mut p = params();
            p.divergence_half_angle = div;
            prop_assert!(geometric_loss_db(r, &p) >= 0.0);
        }

        #[test]
        fn pass_is_symmetric(el in 12.0f64..90.0, step in 0.5f64..5.0) {
            let prof = pass_profile(el, &params(), step).unwrap();
            let s = &prof.samples;
            let n = s.len();
            for i in 0..n / 2 {
                prop_assert!((s[i].loss_db - s[n - 1 - i].loss_db).abs() < 1e-6);
                prop_assert!((s[i].time + s[n - 1 - i].time - prof.duration()).abs() < 1e-6);
            }
        }

        #[test]
        fn higher_passes_lose_less(a in 12.0f64..89.0, d in 0.5f64..10.0) {
            let b = (a + d).min(90.0);
            let p = params();
            let la = pass_profile(a, &p, 1.0).unwrap().min_loss();
            let lb = pass_profile(b, &p, 1.0).unwrap().min_loss();
            prop_assert!(lb <= la + 1e-9);
        }
    }
}
