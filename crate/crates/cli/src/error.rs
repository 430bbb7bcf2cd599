use spatchgan::checkpoint::CheckpointError;
use spatchgan::config::ConfigError;
use spatchgan::data::DataError;
use spatchgan::discriminator::DiscriminatorError;
use spatchgan::generators::GeneratorError;
use spatchgan::metrics::MetricsError;
use spatchgan::trainer::TrainError;

/// Failure of a command. `Input` covers bad flags, configs and data (exit
/// code 2); `Internal` covers everything else (exit code 1).
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Internal(_) => 1,
        }
    }

    pub fn input(msg: impl std::fmt::Display) -> Self {
        CliError::Input(msg.to_string())
    }

    pub fn internal(msg: impl std::fmt::Display) -> Self {
        CliError::Internal(msg.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::input(format!("{e} (see the configuration schema in README.md)"))
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { .. } | DataError::Encode { .. } => CliError::internal(e),
            _ => CliError::input(e),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::input(e)
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Data(d) => d.into(),
            MetricsError::WeightHash(_) => CliError::internal(e),
            _ => CliError::input(e),
        }
    }
}

impl From<GeneratorError> for CliError {
    fn from(e: GeneratorError) -> Self {
        CliError::input(e)
    }
}

impl From<DiscriminatorError> for CliError {
    fn from(e: DiscriminatorError) -> Self {
        CliError::input(e)
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Data(d) => d.into(),
            TrainError::Checkpoint(CheckpointError::Io { .. }) => CliError::internal(e),
            TrainError::Checkpoint(c) => c.into(),
            TrainError::Generator(g) => g.into(),
            TrainError::Discriminator(DiscriminatorError::Stats(_)) => CliError::internal(e),
            TrainError::Discriminator(d) => d.into(),
            _ => CliError::internal(e),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::internal(e)
    }
}
