//! Link budget: static loss vs elevation, satellite pass profiles and
//! log-normal fading.
//!
//! The budget has four terms, all in dB:
//!
//! ```text
//! L(el) = L_geo(R(el)) + L_atm / sin(max(el, 10 deg)) + L_point + L_sys
//! L_geo = -10 log10 min(1, (D_rx / (D_tx + 2 theta R))^2)
//! ```

mod fading;
mod geometry;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fading::{fading_equivalence_experiment, lognormal_samples, FadingComparison, FadingModel};
pub use geometry::{
    atmospheric_loss_db, central_angle_from_elevation, elevation_from_central_angle,
    geometric_loss_db, pass_population, pass_profile, percentile_pass_elevation,
    range_from_elevation, total_loss, PassProfile, PassSample, EARTH_GM, SPEED_OF_LIGHT,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinkError {
    #[error("{name} = {value} is outside its domain ({expected})")]
    Domain {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },
    #[error("max elevation {max_elevation} deg is below the {min_elevation} deg horizon mask")]
    NoPass {
        max_elevation: f64,
        min_elevation: f64,
    },
}

/// Parameters of the ground-to-satellite link. Lengths in metres, angles of
/// elevation in degrees, divergence in radians, losses in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudgetParams {
    pub wavelength: f64,
    pub tx_diameter: f64,
    pub rx_diameter: f64,
    /// Effective half-angle divergence, turbulence included.
    pub divergence_half_angle: f64,
    pub zenith_atm_loss: f64,
    pub pointing_loss: f64,
    /// Receiver optics and detector.
    pub system_loss: f64,
    pub altitude: f64,
    pub earth_radius: f64,
    /// Passes are truncated below this elevation.
    pub min_elevation: f64,
}

impl Default for LinkBudgetParams {
    fn default() -> Self {
        crate::calibration::experimental().link
    }
}

impl LinkBudgetParams {
    pub fn validate(&self) -> Result<(), LinkError> {
        let checks: [(&'static str, f64, bool, &'static str); 10] = [
            ("wavelength", self.wavelength, self.wavelength > 0.0, "> 0"),
            (
                "tx_diameter",
                self.tx_diameter,
                self.tx_diameter > 0.0,
                "> 0",
            ),
            (
                "rx_diameter",
                self.rx_diameter,
                self.rx_diameter > 0.0,
                "> 0",
            ),
            (
                "divergence_half_angle",
                self.divergence_half_angle,
                self.divergence_half_angle >= 0.0,
                ">= 0",
            ),
            (
                "zenith_atm_loss",
                self.zenith_atm_loss,
                self.zenith_atm_loss >= 0.0,
                ">= 0",
            ),
            (
                "pointing_loss",
                self.pointing_loss,
                self.pointing_loss >= 0.0,
                ">= 0",
            ),
            (
                "system_loss",
                self.system_loss,
                self.system_loss >= 0.0,
                ">= 0",
            ),
            ("altitude", self.altitude, self.altitude > 0.0, "> 0"),
            (
                "earth_radius",
                self.earth_radius,
                self.earth_radius > 0.0,
                "> 0",
            ),
            (
                "min_elevation",
                self.min_elevation,
                (0.0..90.0).contains(&self.min_elevation),
                "[0, 90)",
            ),
        ];
        for (name, value, ok, expected) in checks {
            if !ok || !value.is_finite() {
                return Err(LinkError::Domain {
                    name,
                    value,
                    expected,
                });
            }
        }
        Ok(())
    }
}
