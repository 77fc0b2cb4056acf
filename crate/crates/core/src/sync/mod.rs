//! Clock drift between the stations and its removal from Bob's time tags.

pub mod align;
pub mod bandwidth;
pub mod drift;

use thiserror::Error;

pub use align::{
    align_timetags, detection_times, AlignConfig, AlignmentResult, DetectionTime, SectionFit,
};
pub use bandwidth::{bandwidth_estimate, ReportingMode};
pub use drift::{
    apply_clock_drift, clock_tags_through, generate_clock_tags, ClockModel, DriftMode, DriftProfile,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SyncError {
    #[error("{name} = {value} is outside {expected}")]
    Domain {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },
    #[error("at least two clock tags are needed")]
    NoClock,
    #[error("no detections to align")]
    Empty,
    #[error("synchronisation lost in section {section} (starting {start} s): peak significance {significance:.2}")]
    SyncLost {
        section: usize,
        start: f64,
        significance: f64,
    },
}
