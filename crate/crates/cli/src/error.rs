use std::fmt;

use cloudnet_core::evaluation::EvalError;
use cloudnet_core::inference::InferenceError;
use cloudnet_core::model::ModelError;
use cloudnet_core::raster_io::RasterError;
use cloudnet_core::tiling::TilingError;
use cloudnet_core::trainer::TrainError;

/// Failure of a command, classified by exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration. Exit status 1.
    Usage(String),
    /// Missing, malformed or incompatible input data. Exit status 2.
    Data(String),
    /// Anything that went wrong while running. Exit status 3.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl From<RasterError> for CliError {
    fn from(e: RasterError) -> Self {
        match e {
            RasterError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TilingError> for CliError {
    fn from(e: TilingError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) | ModelError::Depth(_) => CliError::Usage(e.to_string()),
            ModelError::CheckpointMismatch(_) | ModelError::Checkpoint { .. } => {
                CliError::Data(format!("{e} (check the [network] section against the checkpoint)"))
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Raster(r) => r.into(),
            TrainError::Model(m) => m.into(),
            TrainError::Tiling(t) => t.into(),
            TrainError::EmptyDataset => CliError::Data("training set is empty; run `prepare` first".into()),
            TrainError::Config(m) => CliError::Usage(m),
            TrainError::Augment(a) => CliError::Usage(a.to_string()),
            TrainError::State(m) => CliError::Data(format!("{m}; pass a checkpoint written by `train`")),
            TrainError::NonFiniteLoss { .. } | TrainError::NonFiniteGradient(_) => {
                CliError::Runtime(format!("{e}; try a lower initial_lr or a different init"))
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::Config(m) => CliError::Usage(m),
            InferenceError::Model(m) => m.into(),
            InferenceError::Tiling(t) => t.into(),
            InferenceError::Raster(r) => r.into(),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io(_) => CliError::Runtime(e.to_string()),
            EvalError::Raster(r) => r.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}
