use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // geometry
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("invalid depth code {0}")]
    InvalidDepth(f64),
    #[error("matrix is not a rotation: {0}")]
    InvalidRotation(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid crop geometry: {0}")]
    InvalidCrop(String),

    // mesh and file formats
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("mesh has no vertices")]
    EmptyMesh,
    #[error("mesh surface area {0:e} is too small to sample")]
    DegenerateMesh(f64),

    // lattice
    #[error("vertex {index} lies outside the lattice box")]
    VertexOutsideLattice { index: usize },
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("invalid deformation: {0}")]
    InvalidDeformation(String),

    // silhouette
    #[error("mesh is entirely behind the camera")]
    FullyBehindCamera,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("mask has no foreground/background boundary")]
    NoBoundary,
    #[error("no perceptual feature extractor is configured")]
    ExtractorUnavailable,
    #[error("invalid mask: {0}")]
    InvalidMask(String),

    // consensus
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("need at least {needed} frames, got {got}")]
    TooFewFrames { needed: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    // metrics / protocol / misc
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("degenerate look-at: {0}")]
    DegenerateLookAt(&'static str),
    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            DegenerateInput(_)
            | BehindCamera { .. }
            | InvalidDepth(_)
            | DegenerateMesh(_)
            | DegenerateConfiguration(_)
            | FullyBehindCamera
            | NoBoundary
            | DegenerateLookAt(_) => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
