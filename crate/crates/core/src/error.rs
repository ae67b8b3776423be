use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no history")]
    NoHistory,

    #[error("history record of {owner_id} at tick {tick} lies outside the confined area")]
    OutsideArea { owner_id: String, tick: u32 },

    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),

    #[error("empty series")]
    EmptySeries,

    #[error("intensity {0} mA is not an integral number of mA")]
    NonIntegralIntensity(f64),

    #[error("conflicting substitutes: patches over [{first_start}, {first_end}) and [{second_start}, {second_end}) overlap")]
    ConflictingSubstitutes {
        first_start: u32,
        first_end: u32,
        second_start: u32,
        second_end: u32,
    },

    #[error("substitute {substitute} does not cover disconnection [{start}, {end})")]
    UncoveredPatch {
        substitute: String,
        start: u32,
        end: u32,
    },

    #[error("invocation of {service_id} over [{start}, {end}) lies outside the request window [{window_start}, {window_end})")]
    InvocationOutsideWindow {
        service_id: String,
        start: u32,
        end: u32,
        window_start: u32,
        window_end: u32,
    },

    #[error("unknown service {0}")]
    UnknownService(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("nominal voltage must be positive, got {0}")]
    InvalidVoltage(f64),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{0}")]
    Mapping(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
