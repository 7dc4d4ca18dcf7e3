use thiserror::Error;

use crate::catalog::PartitionKey;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Process exit classes shared by every front end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitClass {
    Usage = 1,
    Data = 2,
    Unavailable = 3,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid coordinates: ra={ra}, dec={dec}")]
    InvalidCoordinates { ra: f64, dec: f64 },

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("partition {0} already exists")]
    DuplicatePartition(PartitionKey),

    #[error("partition {0} does not exist")]
    UnknownPartition(PartitionKey),

    #[error("partition {0} is frozen in a release")]
    FrozenPartition(PartitionKey),

    #[error("partition {0} is already frozen in an active release")]
    AlreadyFrozen(PartitionKey),

    #[error("record {source_id} routes to {actual}, not {expected}")]
    WrongPartition {
        source_id: u64,
        expected: PartitionKey,
        actual: PartitionKey,
    },

    #[error("batch for visit {visit_id} ccd {ccd_id} has not passed validation")]
    ValidationRequired { visit_id: u64, ccd_id: u16 },

    #[error("night {0} is closed for staging")]
    NightClosed(u64),

    #[error("night {0} is still open for staging")]
    NightOpen(u64),

    #[error("night {0} has not been merged yet")]
    MergePending(u64),

    #[error("staging of visit {visit_id} ccd {ccd_id} was interrupted after {rows_written} rows")]
    StageInterrupted {
        visit_id: u64,
        ccd_id: u16,
        rows_written: usize,
    },

    #[error("ccd id {0} is outside the camera")]
    UnknownCcd(u16),

    #[error("QA failed: {0}")]
    QaFailed(String),

    #[error("release {0} already covers this snapshot")]
    AlreadyReleased(String),

    #[error("unknown release {0}")]
    UnknownRelease(String),

    #[error("unknown object {0}")]
    UnknownObject(u64),

    #[error("object {0} already has a version chain")]
    DuplicateObject(u64),

    #[error("object {object_id} has no version {version}")]
    UnknownVersion { object_id: u64, version: u32 },

    #[error("unknown recipe {0}")]
    UnknownRecipe(String),

    #[error("unknown product {0}")]
    UnknownProduct(String),

    #[error("product {0} already recorded")]
    DuplicateProduct(String),

    #[error("inputs missing: {0}")]
    InputsMissing(String),

    #[error("checksum mismatch for {subject}: expected {expected}, found {found}")]
    ChecksumMismatch {
        subject: String,
        expected: String,
        found: String,
    },

    #[error("unknown logical path {0}")]
    UnknownLogicalPath(String),

    #[error("logical path {0} already registered")]
    DuplicateLogicalPath(String),

    #[error("file header is missing {0}")]
    MissingHeaderField(String),

    #[error("partition {0} is not hosted on node {1}")]
    NotHosted(PartitionKey, String),

    #[error("no node has spare capacity for {0}")]
    NoCapacity(PartitionKey),

    #[error("no alive source replica of {0} in tier {1}")]
    SourceMissing(PartitionKey, String),

    #[error("unknown node {0}")]
    UnknownNode(String),

    #[error("node {0} already exists")]
    DuplicateNode(String),

    #[error("partition {0} has no alive replica")]
    UnavailablePartition(PartitionKey),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable code, one per variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidCoordinates { .. } => "INVALID_COORDINATES",
            Error::InvalidQuery(_) => "INVALID_QUERY",
            Error::Config(_) => "CONFIG",
            Error::DuplicatePartition(_) => "DUPLICATE_PARTITION",
            Error::UnknownPartition(_) => "UNKNOWN_PARTITION",
            Error::FrozenPartition(_) => "FROZEN_PARTITION",
            Error::AlreadyFrozen(_) => "ALREADY_FROZEN",
            Error::WrongPartition { .. } => "WRONG_PARTITION",
            Error::ValidationRequired { .. } => "VALIDATION_REQUIRED",
            Error::NightClosed(_) => "NIGHT_CLOSED",
            Error::NightOpen(_) => "NIGHT_OPEN",
            Error::MergePending(_) => "MERGE_PENDING",
            Error::StageInterrupted { .. } => "STAGE_INTERRUPTED",
            Error::UnknownCcd(_) => "UNKNOWN_CCD",
            Error::QaFailed(_) => "QA_FAILED",
            Error::AlreadyReleased(_) => "ALREADY_RELEASED",
            Error::UnknownRelease(_) => "UNKNOWN_RELEASE",
            Error::UnknownObject(_) => "UNKNOWN_OBJECT",
            Error::DuplicateObject(_) => "DUPLICATE_OBJECT",
            Error::UnknownVersion { .. } => "UNKNOWN_VERSION",
            Error::UnknownRecipe(_) => "UNKNOWN_RECIPE",
            Error::UnknownProduct(_) => "UNKNOWN_PRODUCT",
            Error::DuplicateProduct(_) => "DUPLICATE_PRODUCT",
            Error::InputsMissing(_) => "INPUTS_MISSING",
            Error::ChecksumMismatch { .. } => "CHECKSUM_MISMATCH",
            Error::UnknownLogicalPath(_) => "UNKNOWN_LOGICAL_PATH",
            Error::DuplicateLogicalPath(_) => "DUPLICATE_LOGICAL_PATH",
            Error::MissingHeaderField(_) => "MISSING_HEADER_FIELD",
            Error::NotHosted(..) => "NOT_HOSTED",
            Error::NoCapacity(_) => "NO_CAPACITY",
            Error::SourceMissing(..) => "SOURCE_MISSING",
            Error::UnknownNode(_) => "UNKNOWN_NODE",
            Error::DuplicateNode(_) => "DUPLICATE_NODE",
            Error::UnavailablePartition(_) => "UNAVAILABLE_PARTITION",
            Error::Parse(_) => "PARSE",
            Error::Io(_) => "IO",
            Error::Json(_) => "JSON",
        }
    }

    pub fn exit_class(&self) -> ExitClass {
        match self {
            Error::InvalidQuery(_) | Error::Config(_) | Error::Parse(_) => ExitClass::Usage,
            Error::UnavailablePartition(_) | Error::NoCapacity(_) | Error::SourceMissing(..) => {
                ExitClass::Unavailable
            }
            _ => ExitClass::Data,
        }
    }
}
