//! Error type shared across the crate.

use std::fmt;
use std::io;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, CdisError>;

#[derive(Debug)]
pub enum CdisError {
    /// A voxel grid with a zero-length axis or an overflowing voxel count.
    InvalidDimensions(String),
    /// Buffers or volumes whose shapes do not line up.
    ShapeMismatch(String),
    /// Too few samples to fit the decay model.
    InsufficientData(String),
    /// A scalar argument outside its documented domain.
    InvalidParameter(String),
    /// An inconsistent `CdisConfig` (unknown b-value, exponent count, ...).
    InvalidConfig(String),
    /// AUC requested with an empty positive or negative score set.
    UndefinedAuc(String),
    /// Class-balancing weights requested for a single-class labeling.
    SingleClass(String),
    /// A phantom specification that cannot be realized.
    PhantomSpec(String),
    /// A manifest with no patients.
    EmptyCohort,
    /// Malformed manifest or CSV content.
    Parse(String),
    /// A structurally broken RVF/RVF-T file; `offset` is the byte at fault.
    Format {
        path: PathBuf,
        offset: u64,
        reason: String,
    },
    Io {
        context: String,
        source: io::Error,
    },
    /// A cohort-level failure attributed to one patient.
    Patient {
        id: String,
        source: Box<CdisError>,
    },
    /// Objective evaluation failed or went non-finite at `point`.
    Objective {
        point: Vec<f64>,
        reason: String,
    },
}

impl fmt::Display for CdisError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CdisError::InvalidDimensions(msg) => write!(f, "invalid dimensions: {msg}"),
            CdisError::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            CdisError::InsufficientData(msg) => write!(f, "insufficient data: {msg}"),
            CdisError::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            CdisError::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            CdisError::UndefinedAuc(msg) => write!(f, "undefined AUC: {msg}"),
            CdisError::SingleClass(msg) => write!(f, "single-class labeling: {msg}"),
            CdisError::PhantomSpec(msg) => write!(f, "invalid phantom spec: {msg}"),
            CdisError::EmptyCohort => write!(f, "cohort manifest lists no patients"),
            CdisError::Parse(msg) => write!(f, "parse error: {msg}"),
            CdisError::Format {
                path,
                offset,
                reason,
            } => write!(
                f,
                "bad file format in {} at byte {offset}: {reason}",
                path.display()
            ),
            CdisError::Io { context, source } => write!(f, "I/O error ({context}): {source}"),
            CdisError::Patient { id, source } => write!(f, "patient '{id}': {source}"),
            CdisError::Objective { point, reason } => {
                write!(f, "objective failed at {point:?}: {reason}")
            }
        }
    }
}

impl std::error::Error for CdisError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            CdisError::Io { source, .. } => Some(source),
            CdisError::Patient { source, .. } => Some(source.as_ref()),
            _ => None,
        }
    }
}

impl CdisError {
    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        CdisError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn for_patient(id: impl Into<String>, source: CdisError) -> Self {
        CdisError::Patient {
            id: id.into(),
            source: Box::new(source),
        }
    }
}
