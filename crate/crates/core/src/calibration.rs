//! Calibrated parameter sets.
//!
//! The protocol constants, stray-light rate, timing spread and link terms
//! below are not all published; they were fitted so that the reference
//! operating points (rate and QBER at 30 dB, window optima at 40 and 54 dB,
//! rate near 57 dB, pass yield) land inside their tolerances at once. See the
//! calibration chapter of the guide for the fit.

use crate::decoy::ProtocolParams;
use crate::link::LinkBudgetParams;
use crate::photonics::{DetectorConfig, PatternMode, SourceConfig};

/// A complete physical configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub protocol: ProtocolParams,
    pub source: SourceConfig,
    pub detector: DetectorConfig,
    pub link: LinkBudgetParams,
}

/// Settings matching the field experiment.
pub fn experimental() -> Calibration {
    let protocol = ProtocolParams {
        mu: 0.6,
        nu: 0.1,
        p_signal: 0.8,
        p_decoy: 0.2,
        p_vacuum: 0.0,
        q: 0.5,
        f_ec: 1.22,
        e_detector: 0.017,
        e_zero: 0.5,
        clock_rate: 76e6,
    };
    Calibration {
        protocol,
        source: SourceConfig {
            protocol,
            pattern_mode: PatternMode::Repeating256,
            source_jitter: 200e-12,
        },
        detector: DetectorConfig {
            efficiency: 0.48,
            dark_rate: 20.0,
            background_rate: 130.0,
            jitter_sigma: 30e-12,
            dead_time: 70e-9,
            tick_resolution: 156e-12,
        },
        link: LinkBudgetParams {
            wavelength: 532e-9,
            tx_diameter: 0.25,
            rx_diameter: 0.30,
            divergence_half_angle: 8.5e-6,
            zenith_atm_loss: 1.5,
            pointing_loss: 3.0,
            system_loss: 6.0,
            altitude: 600e3,
            earth_radius: 6371e3,
            min_elevation: 10.0,
        },
    }
}

/// Settings of the idealised simulation: no polarisation drift in the
/// fibre, so a lower intrinsic error.
pub fn simulation() -> Calibration {
    let mut cal = experimental();
    cal.protocol.e_detector = 0.010;
    cal.source.protocol = cal.protocol;
    cal
}
