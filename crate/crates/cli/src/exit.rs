use std::fmt;

use metapu_core::data::DataError;
use metapu_core::geom::GeomError;
use metapu_core::metrics::MetricError;
use metapu_core::net::NetError;
use metapu_core::train::TrainError;

pub const USAGE: u8 = 2;
pub const DATA: u8 = 3;
pub const NUMERIC: u8 = 4;

/// Error carrying its exit code explicitly.
#[derive(Debug)]
pub struct Coded {
    pub code: u8,
    pub message: String,
}

impl fmt::Display for Coded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Coded {}

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    Coded {
        code: USAGE,
        message: message.into(),
    }
    .into()
}

pub fn data(message: impl Into<String>) -> anyhow::Error {
    Coded {
        code: DATA,
        message: message.into(),
    }
    .into()
}

pub fn numeric(message: impl Into<String>) -> anyhow::Error {
    Coded {
        code: NUMERIC,
        message: message.into(),
    }
    .into()
}

fn net_code(e: &NetError) -> u8 {
    match e {
        NetError::ScaleOutOfRange { .. } | NetError::InvalidConfig(_) => USAGE,
        _ => DATA,
    }
}

pub fn code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(c) = cause.downcast_ref::<Coded>() {
            return c.code;
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return match e {
                TrainError::NonFiniteLoss { .. } => NUMERIC,
                TrainError::InvalidConfig(_) => USAGE,
                TrainError::Net(n) => net_code(n),
                _ => DATA,
            };
        }
        if let Some(e) = cause.downcast_ref::<NetError>() {
            return net_code(e);
        }
        if cause.is::<DataError>()
            || cause.is::<GeomError>()
            || cause.is::<MetricError>()
            || cause.is::<std::io::Error>()
        {
            return DATA;
        }
        if cause.is::<serde_json::Error>() {
            return USAGE;
        }
    }
    1
}
