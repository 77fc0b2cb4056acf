//! Decoy-state key-rate mathematics.
//!
//! The channel is modelled with the usual yield/error picture for Poissonian
//! sources:
//!
//! ```text
//! Q(m)   = Y0 + 1 - exp(-eta m)
//! E(m) Q = e0 Y0 + ed (1 - exp(-eta m))
//! ```
//!
//! Single-photon quantities are bounded from a signal (`mu`), a weak decoy
//! (`nu`) and a vacuum measurement (`Y0`):
//!
//! ```text
//! Y1 >= mu / (mu nu - nu^2) [ Q_nu e^nu - Q_mu e^mu nu^2/mu^2 - (mu^2 - nu^2)/mu^2 Y0 ]
//! Q1  = Y1 mu e^-mu
//! e1 <= (E_nu Q_nu e^nu - e0 Y0) / (Y1 nu)
//! ```
//!
//! and the asymptotic key rate per pulse is
//!
//! ```text
//! R >= q N_mu/(N_mu + N_nu) { -Q_mu f H2(E_mu) + Q1 [1 - H2(e1)] }
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecoyError {
    #[error("{name} = {value} is outside its domain ({expected})")]
    Domain {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },
    #[error("invalid protocol parameters: {0}")]
    Parameter(String),
}

fn check(
    name: &'static str,
    value: f64,
    ok: bool,
    expected: &'static str,
) -> Result<(), DecoyError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(DecoyError::Domain {
            name,
            value,
            expected,
        })
    }
}

/// Source and post-processing constants of the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    /// Mean photon number of signal pulses.
    pub mu: f64,
    /// Mean photon number of decoy pulses.
    pub nu: f64,
    pub p_signal: f64,
    pub p_decoy: f64,
    /// Probability of an explicit vacuum pulse. Zero when the vacuum is
    /// measured in the gaps between laser pulses.
    pub p_vacuum: f64,
    /// Basis reconciliation factor.
    pub q: f64,
    /// Error-correction inefficiency `f(E)`.
    pub f_ec: f64,
    /// Intrinsic (optical misalignment) error probability `e_d`.
    pub e_detector: f64,
    /// Error probability of background events `e_0`.
    pub e_zero: f64,
    /// Laser pulses per second.
    pub clock_rate: f64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        crate::calibration::experimental().protocol
    }
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<(), DecoyError> {
        check("mu", self.mu, self.mu > 0.0, "> 0")?;
        check(
            "nu",
            self.nu,
            self.nu >= 0.0 && self.nu < self.mu,
            "0 <= nu < mu",
        )?;
        for (name, p) in [
            ("p_signal", self.p_signal),
            ("p_decoy", self.p_decoy),
            ("p_vacuum", self.p_vacuum),
        ] {
            check(name, p, (0.0..=1.0).contains(&p), "[0, 1]")?;
        }
        let total = self.p_signal + self.p_decoy + self.p_vacuum;
        if (total - 1.0).abs() > 1e-9 {
            return Err(DecoyError::Parameter(format!(
                "pulse-class probabilities sum to {total}, not 1"
            )));
        }
        check("q", self.q, self.q > 0.0 && self.q <= 1.0, "(0, 1]")?;
        check("f_ec", self.f_ec, self.f_ec >= 1.0, ">= 1")?;
        check(
            "e_detector",
            self.e_detector,
            (0.0..=0.5).contains(&self.e_detector),
            "[0, 0.5]",
        )?;
        check(
            "e_zero",
            self.e_zero,
            (0.0..=1.0).contains(&self.e_zero),
            "[0, 1]",
        )?;
        check("clock_rate", self.clock_rate, self.clock_rate > 0.0, "> 0")?;
        Ok(())
    }
}

/// Measured (or modelled) gains and error rates.
///
/// `n_mu` / `n_nu` are detection counts. Only their ratio enters the key
/// rate, so expected counts per pulse are as good as absolute tallies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelObservables {
    pub q_mu: f64,
    pub q_nu: f64,
    pub e_mu: f64,
    pub e_nu: f64,
    pub y_zero: f64,
    pub n_mu: f64,
    pub n_nu: f64,
}

impl ChannelObservables {
    /// Expected observables for a channel of total transmittance `eta`.
    pub fn from_model(params: &ProtocolParams, eta: f64, y_zero: f64) -> Result<Self, DecoyError> {
        let signal = channel_model(params.mu, eta, y_zero, params.e_detector, params.e_zero)?;
        let decoy = channel_model(params.nu, eta, y_zero, params.e_detector, params.e_zero)?;
        Ok(Self {
            q_mu: signal.gain,
            q_nu: decoy.gain,
            e_mu: signal.qber,
            e_nu: decoy.qber,
            y_zero,
            n_mu: params.p_signal * signal.gain,
            n_nu: params.p_decoy * decoy.gain,
        })
    }

    pub fn validate(&self) -> Result<(), DecoyError> {
        for (name, v) in [
            ("q_mu", self.q_mu),
            ("q_nu", self.q_nu),
            ("e_mu", self.e_mu),
            ("e_nu", self.e_nu),
            ("y_zero", self.y_zero),
        ] {
            check(name, v, (0.0..=1.0).contains(&v), "[0, 1]")?;
        }
        check("n_mu", self.n_mu, self.n_mu >= 0.0, ">= 0")?;
        check("n_nu", self.n_nu, self.n_nu >= 0.0, ">= 0")?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinglePhotonBounds {
    pub y1_lower: f64,
    pub q1_lower: f64,
    pub e1_upper: f64,
    /// Set when the yield bound collapsed to zero; no key can be extracted.
    pub degenerate: bool,
}

/// Gain and QBER of one pulse class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelPoint {
    pub gain: f64,
    pub qber: f64,
}

/// Binary Shannon entropy in bits, with `H2(0) = H2(1) = 0`.
pub fn binary_entropy(x: f64) -> Result<f64, DecoyError> {
    check("x", x, (0.0..=1.0).contains(&x), "[0, 1]")?;
    if x == 0.0 || x == 1.0 {
        return Ok(0.0);
    }
    Ok(-x * x.log2() - (1.0 - x) * (-x).ln_1p() / std::f64::consts::LN_2)
}

/// `1 - exp(-x)` without cancellation for small `x`.
#[inline]
pub(crate) fn one_minus_exp_neg(x: f64) -> f64 {
    -(-x).exp_m1()
}

pub fn channel_model(
    m: f64,
    eta: f64,
    y_zero: f64,
    e_detector: f64,
    e_zero: f64,
) -> Result<ChannelPoint, DecoyError> {
    check("m", m, m >= 0.0, ">= 0")?;
    check("eta", eta, (0.0..=1.0).contains(&eta), "[0, 1]")?;
    check("y_zero", y_zero, (0.0..=1.0).contains(&y_zero), "[0, 1]")?;
    check(
        "e_detector",
        e_detector,
        (0.0..=1.0).contains(&e_detector),
        "[0, 1]",
    )?;
    check("e_zero", e_zero, (0.0..=1.0).contains(&e_zero), "[0, 1]")?;

    let signal = one_minus_exp_neg(eta * m);
    let gain = (y_zero + signal).min(1.0);
    if signal == 0.0 {
        return Ok(ChannelPoint { gain, qber: e_zero });
    }
    let qber = ((e_zero * y_zero + e_detector * signal) / (y_zero + signal)).clamp(0.0, 1.0);
    Ok(ChannelPoint { gain, qber })
}

/// Vacuum + weak-decoy bounds on the single-photon yield, gain and error.
pub fn decoy_bounds(
    params: &ProtocolParams,
    obs: &ChannelObservables,
) -> Result<SinglePhotonBounds, DecoyError> {
    let (mu, nu) = (params.mu, params.nu);
    if !(nu > 0.0 && nu < mu) {
        return Err(DecoyError::Parameter(format!(
            "decoy bounds need 0 < nu < mu (got mu = {mu}, nu = {nu})"
        )));
    }
    obs.validate()?;

    let mu2 = mu * mu;
    let nu2 = nu * nu;
    let decoy_term = obs.q_nu * nu.exp();
    let signal_term = obs.q_mu * mu.exp() * nu2 / mu2;
    let vacuum_term = (mu2 - nu2) / mu2 * obs.y_zero;
    let y1 = mu / (mu * nu - nu2) * (decoy_term - signal_term - vacuum_term);

    if !(y1 > 0.0) {
        return Ok(SinglePhotonBounds {
            y1_lower: 0.0,
            q1_lower: 0.0,
            e1_upper: 1.0,
            degenerate: true,
        });
    }
    let y1 = y1.min(1.0);
    let e1 = ((obs.e_nu * decoy_term - params.e_zero * obs.y_zero) / (y1 * nu)).clamp(0.0, 1.0);
    Ok(SinglePhotonBounds {
        y1_lower: y1,
        q1_lower: y1 * mu * (-mu).exp(),
        e1_upper: e1,
        degenerate: false,
    })
}

/// Asymptotic secure key rate in bits per laser pulse, clamped at zero.
///
/// Error rates above 1/2 are treated as 1/2: an upper bound past 1/2
/// carries no information, and `H2` is symmetric.
pub fn secure_key_rate(
    params: &ProtocolParams,
    obs: &ChannelObservables,
    bounds: &SinglePhotonBounds,
) -> Result<f64, DecoyError> {
    params.validate()?;
    obs.validate()?;
    if bounds.degenerate || bounds.y1_lower <= 0.0 {
        return Ok(0.0);
    }
    let detections = obs.n_mu + obs.n_nu;
    if detections <= 0.0 {
        return Ok(0.0);
    }
    let signal_share = obs.n_mu / detections;
    let leak = obs.q_mu * params.f_ec * binary_entropy(obs.e_mu.min(0.5))?;
    let privacy = bounds.q1_lower * (1.0 - binary_entropy(bounds.e1_upper.clamp(0.0, 0.5))?);
    Ok((params.q * signal_share * (privacy - leak)).max(0.0))
}

/// Model observables, bounds and rate for one transmittance, in bits/pulse.
pub fn model_key_rate(params: &ProtocolParams, eta: f64, y_zero: f64) -> Result<f64, DecoyError> {
    let obs = ChannelObservables::from_model(params, eta, y_zero)?;
    let bounds = decoy_bounds(params, &obs)?;
    secure_key_rate(params, &obs, &bounds)
}
