//! Operator surface for the simulator: dataset generation, staged training,
//! evaluation, experiment sweeps, codec benchmarks and message replay.

pub mod args;
pub mod artifacts;
pub mod bench;
pub mod config;
pub mod eval;
pub mod gen;
pub mod replay;
pub mod sweep;
pub mod train;

use std::path::PathBuf;

use thiserror::Error;

pub use args::{run, Cli, Command};
pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::Io { .. } => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}

data_error!(
    v2v_core::worldsim::WorldError,
    v2v_core::fusion::FusionError,
    v2v_core::train::TrainError,
    v2v_core::codec::CodecError,
    v2v_core::channel::ChannelError,
    numcore::NumError,
    serde_json::Error
);
