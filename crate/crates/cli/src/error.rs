use std::path::PathBuf;

use blockrank::bir::BirError;
use blockrank::config::ConfigError;
use blockrank::experiment::ExperimentError;
use blockrank::ingest::IngestError;
use blockrank::mann::MannError;
use blockrank::simgen::SimError;
use blockrank::stats::StatsError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("missing artifact {path}: {hint}")]
    MissingArtifact { path: PathBuf, hint: &'static str },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::MissingArtifact { .. } => 4,
            CliError::Numerical(_) => 5,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<MannError> for CliError {
    fn from(e: MannError) -> Self {
        let msg = e.to_string();
        match e {
            MannError::NonFiniteLoss { .. } => CliError::Numerical(msg),
            MannError::InvalidConfig(_) | MannError::InvalidArchitecture(_) | MannError::InvalidBlockSpec(_) => {
                CliError::Config(msg)
            }
            _ => CliError::Data(msg),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidSpec(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<BirError> for CliError {
    fn from(e: BirError) -> Self {
        match e {
            BirError::Model(m) => m.into(),
            BirError::NonFiniteInput => CliError::Numerical(e.to_string()),
            BirError::InvalidConfig(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::LengthMismatch { .. } | StatsError::Empty => CliError::Data(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(e) => e.into(),
            ExperimentError::Simulation(e) => e.into(),
            ExperimentError::Ingest(e) => e.into(),
            ExperimentError::Model(e) => e.into(),
            ExperimentError::Ranking(e) => e.into(),
            ExperimentError::Stats(e) => e.into(),
            ExperimentError::InconsistentRuns(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Data(e.to_string())
    }
}
