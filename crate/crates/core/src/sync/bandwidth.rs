use serde::{Deserialize, Serialize};

/// What the receiving station reports back over the classical channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportingMode {
    /// One slot per laser pulse.
    Gated,
    /// Only the slots that held a detection.
    Timetag,
}

impl std::str::FromStr for ReportingMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gated" => Ok(Self::Gated),
            "timetag" => Ok(Self::Timetag),
            other => Err(format!("unknown reporting mode {other:?}")),
        }
    }
}

/// Slots per second that must be reported.
///
/// ```
/// use uplink_qkd::sync::{bandwidth_estimate, ReportingMode};
/// let r = bandwidth_estimate(50.0, 1e9, ReportingMode::Timetag, 0.5, 0.0);
/// assert!((r - 5000.0).abs() < 1e-6);
/// assert_eq!(bandwidth_estimate(50.0, 1e9, ReportingMode::Gated, 0.5, 0.0), 1e9);
/// ```
pub fn bandwidth_estimate(
    loss_db: f64,
    clock_rate: f64,
    mode: ReportingMode,
    mu: f64,
    noise_rate: f64,
) -> f64 {
    match mode {
        ReportingMode::Gated => clock_rate,
        ReportingMode::Timetag => {
            clock_rate * mu * crate::db_to_transmittance(loss_db) + noise_rate
        }
    }
}
