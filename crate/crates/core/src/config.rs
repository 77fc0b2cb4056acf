//! Flat `key = value` run configuration.
//!
//! One parameter per line, `#` starts a comment, unknown keys are rejected.
//! Every output file starts with [`RunConfig::to_header`], which parses back
//! to the same configuration.
//!
//! ```
//! use uplink_qkd::config::RunConfig;
//! let mut cfg = RunConfig::default();
//! cfg.apply_str("mu = 0.5\nseed = 11\n").unwrap();
//! assert_eq!(cfg.calibration.protocol.mu, 0.5);
//! let back = RunConfig::from_header(&cfg.to_header()).unwrap();
//! assert_eq!(back, cfg);
//! ```

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::calibration::{self, Calibration};
use crate::decoy::DecoyError;
use crate::link::LinkError;
use crate::photonics::PatternMode;
use crate::sync::{AlignConfig, ClockModel, DriftMode, SyncError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { key: String, line: usize },
    #[error("invalid value {value:?} for {key}: {reason}")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("{key}: {reason}")]
    Invalid { key: String, reason: String },
}

/// Everything a run depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub calibration: Calibration,
    pub clock: ClockModel,
    /// Offset re-estimation interval, seconds.
    pub section_length: f64,
    /// Histogram folding interval, seconds.
    pub fold_section: f64,
    /// Transmittance coherence time for fading runs, seconds.
    pub fading_block: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_calibration(calibration::experimental())
    }
}

/// Keys in header order.
pub const KEYS: &[&str] = &[
    "mu",
    "nu",
    "p_signal",
    "p_decoy",
    "p_vacuum",
    "q",
    "f_ec",
    "e_detector",
    "e_zero",
    "clock_rate",
    "pattern_mode",
    "source_jitter",
    "efficiency",
    "dark_rate",
    "background_rate",
    "jitter_sigma",
    "dead_time",
    "tick_resolution",
    "wavelength",
    "tx_diameter",
    "rx_diameter",
    "divergence_half_angle",
    "zenith_atm_loss",
    "pointing_loss",
    "system_loss",
    "altitude",
    "earth_radius",
    "min_elevation",
    "drift_mode",
    "fractional_error",
    "divide_ratio",
    "initial_offset",
    "drift_segment",
    "section_length",
    "fold_section",
    "fading_block",
    "seed",
    "out_dir",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| ConfigError::InvalidValue {
            key: key.to_string(),
            value: value.to_string(),
            reason: e.to_string(),
        })
}

impl RunConfig {
    pub fn from_calibration(calibration: Calibration) -> Self {
        let clock = ClockModel {
            nominal_period: 1.0 / calibration.protocol.clock_rate,
            fractional_error: 1e-15 * calibration.protocol.clock_rate,
            ..ClockModel::default()
        };
        Self {
            calibration,
            clock,
            section_length: 1.0,
            fold_section: 10e-3,
            fading_block: 10e-3,
            seed: 0,
            out_dir: PathBuf::from("out"),
        }
    }

    /// Current value of `key` in the textual form the parser accepts.
    pub fn get(&self, key: &str) -> Option<String> {
        let c = &self.calibration;
        let (p, d, l) = (&c.protocol, &c.detector, &c.link);
        let f = |x: f64| Some(x.to_string());
        match key {
            "mu" => f(p.mu),
            "nu" => f(p.nu),
            "p_signal" => f(p.p_signal),
            "p_decoy" => f(p.p_decoy),
            "p_vacuum" => f(p.p_vacuum),
            "q" => f(p.q),
            "f_ec" => f(p.f_ec),
            "e_detector" => f(p.e_detector),
            "e_zero" => f(p.e_zero),
            "clock_rate" => f(p.clock_rate),
            "pattern_mode" => Some(c.source.pattern_mode.to_string()),
            "source_jitter" => f(c.source.source_jitter),
            "efficiency" => f(d.efficiency),
            "dark_rate" => f(d.dark_rate),
            "background_rate" => f(d.background_rate),
            "jitter_sigma" => f(d.jitter_sigma),
            "dead_time" => f(d.dead_time),
            "tick_resolution" => f(d.tick_resolution),
            "wavelength" => f(l.wavelength),
            "tx_diameter" => f(l.tx_diameter),
            "rx_diameter" => f(l.rx_diameter),
            "divergence_half_angle" => f(l.divergence_half_angle),
            "zenith_atm_loss" => f(l.zenith_atm_loss),
            "pointing_loss" => f(l.pointing_loss),
            "system_loss" => f(l.system_loss),
            "altitude" => f(l.altitude),
            "earth_radius" => f(l.earth_radius),
            "min_elevation" => f(l.min_elevation),
            "drift_mode" => Some(self.clock.drift_mode.to_string()),
            "fractional_error" => f(self.clock.fractional_error),
            "divide_ratio" => Some(self.clock.divide_ratio.to_string()),
            "initial_offset" => f(self.clock.initial_offset),
            "drift_segment" => f(self.clock.segment),
            "section_length" => f(self.section_length),
            "fold_section" => f(self.fold_section),
            "fading_block" => f(self.fading_block),
            "seed" => Some(self.seed.to_string()),
            "out_dir" => Some(self.out_dir.display().to_string()),
            _ => None,
        }
    }

    /// Set one key. Values are parsed but not validated.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        let c = &mut self.calibration;
        let x = || parse::<f64>(key, value);
        match key {
            "mu" => c.protocol.mu = x()?,
            "nu" => c.protocol.nu = x()?,
            "p_signal" => c.protocol.p_signal = x()?,
            "p_decoy" => c.protocol.p_decoy = x()?,
            "p_vacuum" => c.protocol.p_vacuum = x()?,
            "q" => c.protocol.q = x()?,
            "f_ec" => c.protocol.f_ec = x()?,
            "e_detector" => c.protocol.e_detector = x()?,
            "e_zero" => c.protocol.e_zero = x()?,
            "clock_rate" => {
                c.protocol.clock_rate = x()?;
                self.clock.nominal_period = 1.0 / c.protocol.clock_rate;
            }
            "pattern_mode" => c.source.pattern_mode = parse::<PatternMode>(key, value)?,
            "source_jitter" => c.source.source_jitter = x()?,
            "efficiency" => c.detector.efficiency = x()?,
            "dark_rate" => c.detector.dark_rate = x()?,
            "background_rate" => c.detector.background_rate = x()?,
            "jitter_sigma" => c.detector.jitter_sigma = x()?,
            "dead_time" => c.detector.dead_time = x()?,
            "tick_resolution" => c.detector.tick_resolution = x()?,
            "wavelength" => c.link.wavelength = x()?,
            "tx_diameter" => c.link.tx_diameter = x()?,
            "rx_diameter" => c.link.rx_diameter = x()?,
            "divergence_half_angle" => c.link.divergence_half_angle = x()?,
            "zenith_atm_loss" => c.link.zenith_atm_loss = x()?,
            "pointing_loss" => c.link.pointing_loss = x()?,
            "system_loss" => c.link.system_loss = x()?,
            "altitude" => c.link.altitude = x()?,
            "earth_radius" => c.link.earth_radius = x()?,
            "min_elevation" => c.link.min_elevation = x()?,
            "drift_mode" => self.clock.drift_mode = parse::<DriftMode>(key, value)?,
            "fractional_error" => self.clock.fractional_error = x()?,
            "divide_ratio" => self.clock.divide_ratio = parse(key, value)?,
            "initial_offset" => self.clock.initial_offset = x()?,
            "drift_segment" => self.clock.segment = x()?,
            "section_length" => self.section_length = x()?,
            "fold_section" => self.fold_section = x()?,
            "fading_block" => self.fading_block = x()?,
            "seed" => self.seed = parse(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            _ => {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                    line: 0,
                })
            }
        }
        c.source.protocol = c.protocol;
        Ok(())
    }

    /// Apply `key = value` lines on top of the current values.
    pub fn apply_str(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    text: raw.to_string(),
                });
            };
            self.set(k.trim(), v).map_err(|e| match e {
                ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey { key, line: i + 1 },
                other => other,
            })?;
        }
        Ok(())
    }

    /// Defaults overlaid with a config file, then validated.
    pub fn load(path: &Path) -> Result<Self, crate::Error> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::default();
        cfg.apply_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse `# key = value` header lines, ignoring any other comment lines.
    pub fn from_header(header: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in header.lines().enumerate() {
            let Some(body) = raw.strip_prefix('#') else {
                break;
            };
            let Some((k, v)) = body.split_once('=') else {
                continue;
            };
            let k = k.trim();
            if KEYS.contains(&k) {
                cfg.set(k, v).map_err(|e| match e {
                    ConfigError::UnknownKey { key, .. } => {
                        ConfigError::UnknownKey { key, line: i + 1 }
                    }
                    other => other,
                })?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Comment header recording every key and the config hash.
    pub fn to_header(&self) -> String {
        let mut s = format!("# uplink-qkd config {:016x}\n", self.hash());
        for k in KEYS {
            s.push_str(&format!("# {k} = {}\n", self.get(k).expect("listed key")));
        }
        s
    }

    /// FNV-1a hash of the canonical `key = value` listing.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for k in KEYS {
            for b in format!("{k}={}\n", self.get(k).expect("listed key")).bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    pub fn align_config(&self) -> AlignConfig {
        AlignConfig {
            section_length: self.section_length,
            ..AlignConfig::default()
        }
    }

    /// Check every field against its module's invariants. Errors name the
    /// offending key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, reason: String| ConfigError::Invalid {
            key: key.to_string(),
            reason,
        };
        let c = &self.calibration;
        let decoy = |e: DecoyError| match e {
            DecoyError::Domain {
                name,
                value,
                expected,
            } => invalid(name, format!("{value} is outside {expected}")),
            other => invalid("p_signal", other.to_string()),
        };
        c.protocol.validate().map_err(decoy)?;
        c.source.validate().map_err(decoy)?;
        c.detector.validate().map_err(decoy)?;
        if c.protocol.nu <= 0.0 {
            return Err(invalid("nu", "the decoy intensity must be positive".into()));
        }
        c.link.validate().map_err(|e| match e {
            LinkError::Domain {
                name,
                value,
                expected,
            } => invalid(name, format!("{value} is outside {expected}")),
            other => invalid("min_elevation", other.to_string()),
        })?;
        let sync = |e: SyncError| match e {
            SyncError::Domain {
                name,
                value,
                expected,
            } => {
                let key = match name {
                    "segment" => "drift_segment",
                    "nominal_period" => "clock_rate",
                    other => other,
                };
                invalid(key, format!("{value} is outside {expected}"))
            }
            other => invalid("drift_mode", other.to_string()),
        };
        self.clock.validate().map_err(sync)?;
        self.align_config().validate().map_err(sync)?;
        for (key, v) in [
            ("fold_section", self.fold_section),
            ("fading_block", self.fading_block),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(key, format!("{v} is outside > 0")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.apply_str("mu = 0.55\nnu=0.07\ndrift_mode = random_walk\nfractional_error = 1.3e-11\nseed = 99\nout_dir = /tmp/x y\n")
            .unwrap();
        let back = RunConfig::from_header(&cfg.to_header()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn unknown_key_names_line() {
        let err = RunConfig::default()
            .apply_str("mu = 0.5\n\nbogus = 1\n")
            .unwrap_err();
        assert_eq!(
            err,
            ConfigError::UnknownKey {
                key: "bogus".into(),
                line: 3
            }
        );
    }

    #[test]
    fn bad_value_and_syntax() {
        let mut cfg = RunConfig::default();
        assert!(matches!(
            cfg.apply_str("mu = abc"),
            Err(ConfigError::InvalidValue { .. })
        ));
        assert!(matches!(
            cfg.apply_str("mu 0.5"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
    }

    #[test]
    fn validation_names_key() {
        for (k, v) in [
            ("efficiency", "1.5"),
            ("nu", "0.9"),
            ("divergence_half_angle", "-1"),
            ("drift_segment", "0"),
            ("section_length", "0"),
            ("fading_block", "-1"),
        ] {
            let mut cfg = RunConfig::default();
            cfg.set(k, v).unwrap();
            match cfg.validate() {
                Err(ConfigError::Invalid { key, .. }) => assert_eq!(key, k),
                other => panic!("{k}: {other:?}"),
            }
        }
    }

    #[test]
    fn later_wins() {
        let mut cfg = RunConfig::default();
        cfg.apply_str("mu = 0.4\nmu = 0.7\n").unwrap();
        assert_eq!(cfg.calibration.protocol.mu, 0.7);
    }

    #[test]
    fn every_key_has_a_getter() {
        let cfg = RunConfig::default();
        for k in KEYS {
            let v = cfg.get(k).unwrap();
            let mut c2 = cfg.clone();
            c2.set(k, &v).unwrap();
            assert_eq!(c2, cfg, "{k}");
        }
    }
}
