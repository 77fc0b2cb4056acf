//! Decoy-state BB84 with weak coherent pulses over high-loss free-space
//! uplinks.
//!
//! The crate covers the full chain from pulse generation to secret key per
//! satellite pass:
//!
//! - [`decoy`]: gains, error rates, single-photon bounds and the asymptotic
//!   secure key rate.
//! - [`photonics`]: Monte Carlo of the source, channel and detectors,
//!   producing time tags and tallies.
//! - [`sync`]: clock drift between stations and its removal from time tags
//!   without any reference to bit values.
//! - [`window`]: acceptance-window trade-off between signal and background.
//! - [`link`]: link budget, pass geometry and log-normal fading.
//! - [`pass`]: key rate against loss, cutoff loss and key per pass.
//!
//! ```
//! use uplink_qkd::{calibration, window::ClosedFormModel};
//! let model = ClosedFormModel::from_calibration(&calibration::experimental());
//! let widths = uplink_qkd::window::default_widths(model.period());
//! let (best, _) = model.optimal(30.0, &widths);
//! assert!(best.secure_rate > 5000.0);
//! ```

pub mod calibration;
pub mod config;
pub mod decoy;
pub mod error;
pub mod link;
pub mod pass;
pub mod photonics;
pub mod rng;
pub mod sync;
pub mod window;

pub use error::{Error, Result};

/// `10^(-db/10)`.
pub fn db_to_transmittance(db: f64) -> f64 {
    10f64.powf(-db / 10.0)
}

/// `-10 log10(eta)`.
pub fn transmittance_to_db(eta: f64) -> f64 {
    -10.0 * eta.log10()
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/decoy.md")]
    mod decoy {}
    #[doc = include_str!("../../../book/src/photonics.md")]
    mod photonics {}
    #[doc = include_str!("../../../book/src/sync.md")]
    mod sync {}
    #[doc = include_str!("../../../book/src/window.md")]
    mod window {}
    #[doc = include_str!("../../../book/src/link.md")]
    mod link {}
    #[doc = include_str!("../../../book/src/pass.md")]
    mod pass {}
    #[doc = include_str!("../../../book/src/calibration.md")]
    mod calibration {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
