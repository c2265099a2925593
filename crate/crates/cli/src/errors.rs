//! Error-to-exit-code mapping. The classes partition the failure space:
//! configuration (2), data format (3), numeric aborts (4), and I/O (5).

use spmk_core::body_model::ModelError;
use spmk_core::camera::CameraError;
use spmk_core::config::ConfigError;
use spmk_core::fusion::sim::SimError;
use spmk_core::fusion::FusionError;
use spmk_core::heatmap::HeatmapError;
use spmk_core::isocenter::IsocenterError;
use spmk_core::regressor::RegressorError;
use spmk_core::synthgen::SynthError;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Io(_) => 5,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration: {m}"),
            CliError::Data(m) => write!(f, "data format: {m}"),
            CliError::Numeric(m) => write!(f, "numeric: {m}"),
            CliError::Io(m) => write!(f, "io: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::File { ref detail, .. } if detail.contains("No such file") => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io { .. } => CliError::Io(e.to_string()),
            ModelError::Parse(_) | ModelError::Invariant { .. } => CliError::Data(e.to_string()),
        }
    }
}

impl From<CameraError> for CliError {
    fn from(e: CameraError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<HeatmapError> for CliError {
    fn from(e: HeatmapError) -> Self {
        match e {
            HeatmapError::NonPositiveSigma(_) | HeatmapError::NonPositiveTemperature(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::EmptyBank
            | SynthError::InvalidConfig(_)
            | SynthError::Camera(_)
            | SynthError::VisibilityExhausted { .. } => CliError::Config(e.to_string()),
            SynthError::BankIo { .. } | SynthError::Io { .. } => CliError::Io(e.to_string()),
            SynthError::MalformedPose { .. }
            | SynthError::Shard { .. }
            | SynthError::Manifest { .. } => CliError::Data(e.to_string()),
            SynthError::Heatmap(inner) => inner.into(),
        }
    }
}

impl From<RegressorError> for CliError {
    fn from(e: RegressorError) -> Self {
        match e {
            RegressorError::InvalidConfig(_) => CliError::Config(e.to_string()),
            RegressorError::NanLoss { .. } => CliError::Numeric(e.to_string()),
            RegressorError::ShapeMismatch(_)
            | RegressorError::EmptyDataset
            | RegressorError::Checkpoint { .. } => CliError::Data(e.to_string()),
            RegressorError::Synth(inner) => inner.into(),
            RegressorError::Heatmap(inner) => inner.into(),
            RegressorError::Metric(inner) => CliError::Data(inner.to_string()),
        }
    }
}

impl From<FusionError> for CliError {
    fn from(e: FusionError) -> Self {
        match e {
            FusionError::Checkpoint { .. } => CliError::Data(e.to_string()),
            FusionError::Heatmap(inner) => inner.into(),
            FusionError::SingleClassDataset
            | FusionError::EmptyDataset
            | FusionError::BadFeatureDim(_)
            | FusionError::ScoreOutOfRange(_)
            | FusionError::InvalidBranchError(_) => CliError::Config(e.to_string()),
            FusionError::FeatureDimMismatch { .. } => CliError::Data(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Synth(inner) => inner.into(),
            SimError::Fusion(inner) => inner.into(),
            SimError::Metric(inner) => CliError::Data(inner.to_string()),
            SimError::InvalidConfig(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<IsocenterError> for CliError {
    fn from(e: IsocenterError) -> Self {
        match e {
            IsocenterError::UnknownRegion { .. } => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
