use std::path::PathBuf;

use thiserror::Error;

/// Structural problems with a user layout.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LayoutError {
    #[error("global_text is empty")]
    EmptyGlobalText,
    #[error("layout has no instances")]
    NoInstances,
    #[error("instances[{index}].text is empty")]
    EmptyInstanceText { index: usize },
    #[error("instances[{index}].box has zero or negative area: [{x0}, {y0}, {x1}, {y1}]")]
    DegenerateBox {
        index: usize,
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
    },
    #[error("instances[{index}].box.{field} = {value} lies outside [0, 1]")]
    OutOfRangeCoordinate {
        index: usize,
        field: &'static str,
        value: f64,
    },
    #[error("{count} instances exceed the configured maximum of {max}")]
    TooManyInstances { count: usize, max: usize },
    #[error("resolution must be positive, got {0}")]
    NonPositiveResolution(i64),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("resolution must be positive, got {0}")]
    NonPositiveResolution(i64),
    #[error("gamma {gamma} exceeds total steps {total_steps}")]
    GammaOutOfRange { gamma: usize, total_steps: usize },
    #[error("step {step} is outside [0, {total_steps})")]
    StepOutOfRange { step: usize, total_steps: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TokenError {
    #[error("segment length must be at least 1")]
    ZeroSegmentLength,
    #[error("embedding dim {dim} leaves no content dims next to {attributes} attribute dims")]
    DimTooSmall { dim: usize, attributes: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttentionError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("row {0} is not padding but permits no keys")]
    EmptyRow(usize),
    #[error("dim {dim} is not divisible by {heads} heads")]
    HeadsDoNotDivide { dim: usize, heads: usize },
    #[error("attribute dims {attributes} do not fit in dim {dim}")]
    AttributeDimsTooLarge { dim: usize, attributes: usize },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DepthError {
    #[error("depth map dimensions must be at least 1x1, got {h}x{w}")]
    EmptyMap { h: usize, w: usize },
    #[error("no pixel inside the box lies on the modal depth plateau")]
    EmptyComponent,
}

/// Failures loading a layout document from disk.
#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: line {line}, column {column}: {message}")]
    Json {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: invalid layout")]
    Invalid { path: PathBuf, source: LayoutError },
}

/// Pipeline-level error covering every stage.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Token(#[from] TokenError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Depth(#[from] DepthError),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("instance {id} has no attribute and none of its words is in the vocabulary")]
    MissingAttribute { id: u32 },
    #[error("suite is empty")]
    EmptySuite,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
