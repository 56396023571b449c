use thiserror::Error;

use crate::manifold::ChartPoint;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point {coords:?} lies outside the domain of chart `{chart}`")]
    Domain { chart: String, coords: Vec<f64> },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The integrated curve left every chart of the atlas. `last` is the last
    /// state that was still inside a chart.
    #[error("trajectory escaped the atlas at t = {time}")]
    Escape { time: f64, last: ChartPoint },

    #[error("shooting did not converge after {attempts} attempts (best residual {residual:.3e})")]
    NonConvergence { attempts: usize, residual: f64 },

    #[error("{}", fmt_config(*.line, .field.as_deref(), .message))]
    Config {
        line: Option<usize>,
        field: Option<String>,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn fmt_config(line: Option<usize>, field: Option<&str>, message: &str) -> String {
    match (line, field) {
        (Some(l), Some(f)) => format!("config error at line {l}, field `{f}`: {message}"),
        (Some(l), None) => format!("config error at line {l}: {message}"),
        (None, Some(f)) => format!("config error in field `{f}`: {message}"),
        (None, None) => format!("config error: {message}"),
    }
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn config(line: Option<usize>, field: Option<&str>, msg: impl Into<String>) -> Self {
        Error::Config {
            line,
            field: field.map(str::to_owned),
            message: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
