//! Errors reported as a JSON object on stderr with a stable code and a
//! matching exit status.

use std::fmt::Display;
use std::path::Path;

use serde::Serialize;

use lmflow::{BootstrapError, CarimaError, EquilibriumError, EstimateError, FlowError, IngestError, SynthError};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Data(String),
    Estimate(String),
    Model(String),
    Equilibrium(String),
    Synth(String),
}

#[derive(Serialize)]
struct ErrorJson<'a> {
    code: &'a str,
    exit_code: i32,
    message: String,
}

impl CliError {
    pub fn config(e: impl Display) -> Self {
        CliError::Config(e.to_string())
    }

    pub fn io(path: &Path, e: impl Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Data(_) => "data",
            CliError::Estimate(_) => "estimate",
            CliError::Model(_) => "model",
            CliError::Equilibrium(_) => "equilibrium",
            CliError::Synth(_) => "synth",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Data(_) => 4,
            CliError::Estimate(_) => 5,
            CliError::Model(_) => 6,
            CliError::Equilibrium(_) => 7,
            CliError::Synth(_) => 8,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m)
            | CliError::Io(m)
            | CliError::Data(m)
            | CliError::Estimate(m)
            | CliError::Model(m)
            | CliError::Equilibrium(m)
            | CliError::Synth(m) => m,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ErrorJson {
            code: self.code(),
            exit_code: self.exit_code(),
            message: self.message().to_string(),
        })
        .expect("plain strings serialize")
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Io { .. } => CliError::Io(e.to_string()),
            IngestError::BadFilter(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EstimateError> for CliError {
    fn from(e: EstimateError) -> Self {
        CliError::Estimate(e.to_string())
    }
}

impl From<FlowError> for CliError {
    fn from(e: FlowError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<BootstrapError> for CliError {
    fn from(e: BootstrapError) -> Self {
        match e {
            BootstrapError::InvalidConfig(_) => CliError::Config(e.to_string()),
            _ => CliError::Model(e.to_string()),
        }
    }
}

impl From<CarimaError> for CliError {
    fn from(e: CarimaError) -> Self {
        match e {
            CarimaError::InvalidSpec(_) | CarimaError::ShiftTooLarge(_) | CarimaError::BadPopulation(_) => {
                CliError::Config(e.to_string())
            }
            CarimaError::Estimate(inner) => inner.into(),
            CarimaError::MissingQuarter(_) => CliError::Estimate(e.to_string()),
            _ => CliError::Model(e.to_string()),
        }
    }
}

impl From<EquilibriumError> for CliError {
    fn from(e: EquilibriumError) -> Self {
        CliError::Equilibrium(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Synth(e.to_string())
    }
}
