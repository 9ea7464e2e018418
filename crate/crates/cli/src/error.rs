//! Error classification onto the exit-code contract.

use std::fmt;
use std::process::ExitCode;

use threer::config::ConfigError;
use threer::image::ImageError;
use threer::metrics::MetricsError;
use threer::network::NetworkError;
use threer::objectives::ObjectiveError;
use threer::tensor::TensorError;
use threer::training::TrainingError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Config = 1,
    Io = 2,
    Shape = 3,
    Numeric = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Kind::Config, message)
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.kind as u8)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn tensor_kind(e: &TensorError) -> Kind {
    match e {
        TensorError::DataLength { .. }
        | TensorError::ShapeMismatch { .. }
        | TensorError::InvalidArgument { .. } => Kind::Shape,
        _ => Kind::Numeric,
    }
}

fn config_kind(e: &ConfigError) -> Kind {
    match e {
        ConfigError::Io { .. } => Kind::Io,
        _ => Kind::Config,
    }
}

fn image_kind(e: &ImageError) -> Kind {
    match e {
        ImageError::Io { .. }
        | ImageError::Decode(_)
        | ImageError::Encode(_)
        | ImageError::UnsupportedColorType(_) => Kind::Io,
        ImageError::OddDimensions { .. }
        | ImageError::TooSmall { .. }
        | ImageError::DimensionMismatch(..) => Kind::Shape,
        ImageError::UnstableAr(_) | ImageError::InvalidGrain(_) | ImageError::Manifest { .. } => {
            Kind::Config
        }
        ImageError::Config(c) => config_kind(c),
        ImageError::Tensor(t) => tensor_kind(t),
    }
}

fn network_kind(e: &NetworkError) -> Kind {
    match e {
        NetworkError::Tensor(t) => tensor_kind(t),
        NetworkError::NonFinite(_) => Kind::Numeric,
        NetworkError::BadMagic(_)
        | NetworkError::Version { .. }
        | NetworkError::Truncated(_)
        | NetworkError::Malformed(_)
        | NetworkError::Io { .. } => Kind::Io,
        NetworkError::Shape(_) => Kind::Shape,
    }
}

fn objective_kind(e: &ObjectiveError) -> Kind {
    match e {
        ObjectiveError::Tensor(t) => tensor_kind(t),
        ObjectiveError::Shape(_) | ObjectiveError::TooSmall { .. } => Kind::Shape,
        ObjectiveError::NonFinite(_) | ObjectiveError::OutOfRange(_) => Kind::Numeric,
        ObjectiveError::InvalidRate(_) => Kind::Config,
    }
}

fn training_kind(e: &TrainingError) -> Kind {
    match e {
        TrainingError::EmptyDataset => Kind::Config,
        TrainingError::NonFinite { .. } | TrainingError::MissingGrad(_) => Kind::Numeric,
        TrainingError::Image(i) => image_kind(i),
        TrainingError::Network(n) => network_kind(n),
        TrainingError::Objective(o) => objective_kind(o),
        TrainingError::Tensor(t) => tensor_kind(t),
        TrainingError::Config(c) => config_kind(c),
        TrainingError::Io(_) => Kind::Io,
    }
}

fn metrics_kind(e: &MetricsError) -> Kind {
    match e {
        MetricsError::DimensionMismatch(..) => Kind::Shape,
        MetricsError::ZeroReferencePower => Kind::Numeric,
        MetricsError::UnknownConfig(_)
        | MetricsError::MissingBaseline { .. }
        | MetricsError::Measurements { .. } => Kind::Config,
        MetricsError::Objective(o) => objective_kind(o),
        MetricsError::Network(n) => network_kind(n),
        MetricsError::Image(i) => image_kind(i),
        MetricsError::Io(_) => Kind::Io,
    }
}

macro_rules! classify {
    ($($ty:ty => $f:expr),* $(,)?) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::new($f(&e), e.to_string())
            }
        })*
    };
}

classify! {
    ConfigError => config_kind,
    ImageError => image_kind,
    NetworkError => network_kind,
    ObjectiveError => objective_kind,
    TrainingError => training_kind,
    MetricsError => metrics_kind,
    TensorError => tensor_kind,
    std::io::Error => |_: &std::io::Error| Kind::Io,
}
