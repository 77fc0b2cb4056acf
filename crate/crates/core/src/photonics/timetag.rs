//! Timetag records and their binary file format.
//!
//! A file is a bare sequence of 10-byte little-endian records:
//!
//! | bytes | field                     |
//! |-------|---------------------------|
//! | 0..8  | tick (`u64`)              |
//! | 8     | channel (`u8`)            |
//! | 9     | ground-truth code (`u8`)  |

use std::io::{self, Read, Write};

use super::PulseClass;

pub const RECORD_BYTES: usize = 10;

/// Channel used for frequency-divided laser clock tags.
pub const CLOCK_CHANNEL: u8 = 7;

/// Ground-truth origin of an event. Simulation-only; real data is `Unlabeled`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Truth {
    Unlabeled,
    Pulse(PulseClass),
    Dark,
    Background,
    Clock,
}

impl Truth {
    pub fn code(self) -> u8 {
        match self {
            Truth::Unlabeled => 0,
            Truth::Pulse(PulseClass::Signal) => 1,
            Truth::Pulse(PulseClass::Decoy) => 2,
            Truth::Pulse(PulseClass::Vacuum) => 3,
            Truth::Dark => 4,
            Truth::Background => 5,
            Truth::Clock => 6,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Truth::Unlabeled,
            1 => Truth::Pulse(PulseClass::Signal),
            2 => Truth::Pulse(PulseClass::Decoy),
            3 => Truth::Pulse(PulseClass::Vacuum),
            4 => Truth::Dark,
            5 => Truth::Background,
            6 => Truth::Clock,
            _ => return None,
        })
    }

    pub fn is_signal(self) -> bool {
        matches!(self, Truth::Pulse(_))
    }

    pub fn is_noise(self) -> bool {
        matches!(self, Truth::Dark | Truth::Background)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timetag {
    pub tick: u64,
    /// Detector (bit value) that fired, or [`CLOCK_CHANNEL`].
    pub channel: u8,
    pub truth: Truth,
}

pub fn write_timetags<W: Write>(mut w: W, tags: &[Timetag]) -> io::Result<()> {
    let mut buf = [0u8; RECORD_BYTES];
    for t in tags {
        buf[..8].copy_from_slice(&t.tick.to_le_bytes());
        buf[8] = t.channel;
        buf[9] = t.truth.code();
        w.write_all(&buf)?;
    }
    w.flush()
}

pub fn read_timetags<R: Read>(mut r: R) -> io::Result<Vec<Timetag>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!(
                "{} trailing bytes after last record",
                bytes.len() % RECORD_BYTES
            ),
        ));
    }
    bytes
        .chunks_exact(RECORD_BYTES)
        .enumerate()
        .map(|(i, rec)| {
            let tick = u64::from_le_bytes(rec[..8].try_into().expect("8-byte slice"));
            let truth = Truth::from_code(rec[9]).ok_or_else(|| {
                io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("record {i}: unknown truth code {}", rec[9]),
                )
            })?;
            Ok(Timetag {
                tick,
                channel: rec[8],
                truth,
            })
        })
        .collect()
}
