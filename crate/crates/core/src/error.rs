use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    // manifests
    #[error("manifest line {line}: {message}")]
    ManifestParse { line: usize, message: String },
    #[error("manifest line {line}: missing field `{field}`")]
    MissingField { line: usize, field: String },
    #[error("manifest line {line}: duplicate utt_id `{utt_id}` (first seen on line {first_line})")]
    DuplicateUttId {
        utt_id: String,
        line: usize,
        first_line: usize,
    },
    #[error("manifest role {role}: {message}")]
    ManifestRole { role: String, message: String },
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("manifest has a single speaker; multi-speaker training needs at least two")]
    SingleSpeakerManifest,

    // S3VC / S3CK containers
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("malformed container: {0}")]
    Malformed(String),

    // configuration
    #[error("unknown config key `{key}`{}", hint.as_deref().map(|h| format!(" ({h})")).unwrap_or_default())]
    UnknownConfigKey { key: String, hint: Option<String> },
    #[error("config key `{key}`: {message}")]
    ConfigType { key: String, message: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    // signal processing / features
    #[error("input too short: {samples} samples, need at least {required}")]
    TooShort { samples: usize, required: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("length mismatch: {left} vs {right} frames")]
    LengthMismatch { left: usize, right: usize },
    #[error("no feature file for utterance `{utt_id}` at {path}")]
    MissingFeatureFile { utt_id: String, path: PathBuf },
    #[error("features missing for {} utterance(s): {}", .0.len(), .0.join(", "))]
    FeaturesMissing(Vec<String>),
    #[error("invalid input: {0}")]
    InvalidInput(String),

    // speaker conditioning
    #[error("model is speaker-conditioned but no speaker embedding was given")]
    MissingEmbedding,
    #[error("model is not speaker-conditioned but a speaker embedding was given")]
    ExtraEmbedding,
    #[error("cannot average an empty list of embeddings")]
    EmptyEmbeddings,
    #[error("embeddings average to the zero vector")]
    ZeroMeanEmbedding,
    #[error("embedding has zero or non-finite norm")]
    DegenerateEmbedding,

    // external adapters
    #[error("adapter `{command}` exited with {status}: {stderr}")]
    AdapterExit {
        command: String,
        status: String,
        stderr: String,
    },
    #[error("adapter `{command}` produced malformed output: {message}")]
    AdapterOutput { command: String, message: String },
    #[error("adapter failed for utterance `{utt_id}`: {source}")]
    AdapterForUtterance {
        utt_id: String,
        #[source]
        source: Box<Error>,
    },
    #[error("audio: {0}")]
    Audio(String),

    // metrics
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("degenerate variance in column `{0}`")]
    DegenerateVariance(String),
    #[error("need at least {required} rows, got {found}")]
    InsufficientRows { required: usize, found: usize },
    #[error("row `{system}` is missing `{field}`")]
    MissingMetric { system: String, field: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<hound::Error> for Error {
    fn from(e: hound::Error) -> Self {
        Error::Audio(e.to_string())
    }
}
