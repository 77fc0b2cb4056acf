use thiserror::Error;

use crate::config::ConfigError;
use crate::decoy::DecoyError;
use crate::link::LinkError;
use crate::pass::PassError;
use crate::sync::SyncError;

/// Crate-wide error, one variant per subsystem.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Decoy(#[from] DecoyError),
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Pass(#[from] PassError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
