//! Exit codes: 2 configuration, 3 data, 4 divergence, 1 anything else.

use std::fmt;

/// A problem with the manifest or the command line.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// A missing or malformed input file.
#[derive(Debug)]
pub struct DataError(pub String);

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "data error: {}", self.0)
    }
}

impl std::error::Error for DataError {}

pub const CONFIG: u8 = 2;
pub const DATA: u8 = 3;
pub const DIVERGENCE: u8 = 4;

pub fn code(err: &anyhow::Error) -> u8 {
    use protoalign::Error as E;
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return CONFIG;
        }
        if cause.is::<DataError>() {
            return DATA;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Parameter(_) => CONFIG,
                E::Divergence(_) => DIVERGENCE,
                E::Dimension { .. } | E::Format { .. } | E::Snapshot(_) | E::Data(_) | E::Io { .. } => DATA,
            };
        }
    }
    1
}
