use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Parse failures of the CEMB1 embedding format.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic bytes {0:?}, expected \"CEMB\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown embedding kind tag {0}")]
    BadKind(u8),
    #[error("dimension must be positive")]
    ZeroDim,
    #[error("truncated header while reading {0}")]
    TruncatedHeader(&'static str),
    #[error("truncated payload in record {record} while reading {field}")]
    TruncatedRecord { record: usize, field: &'static str },
    #[error("record {record}: name is not valid UTF-8")]
    InvalidName { record: usize },
    #[error("record {record}: duplicate name `{name}`")]
    DuplicateName { record: usize, name: String },
    #[error("record {record} (`{name}`): component {component} is not finite")]
    NonFinite {
        record: usize,
        name: String,
        component: usize,
    },
    #[error("{0} unexpected trailing bytes after the last record")]
    TrailingBytes(usize),
    #[error("listing line {line}: {reason}")]
    Listing { line: usize, reason: String },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("invalid embedding set: {0}")]
    InvalidEmbeddings(String),
    #[error("class `{0}` has no image embeddings")]
    MissingClass(String),
    #[error("invalid synth spec: {0}")]
    InvalidSynthSpec(String),
    #[error(
        "separation infeasible: could not place anchor {placed} of {clusters} at distance >= {separation} after {retries} retries"
    )]
    SeparationInfeasible {
        placed: usize,
        clusters: usize,
        separation: f64,
        retries: usize,
    },
    #[error("infeasible k: k = {k} but only {classes} classes are available")]
    InfeasibleK { k: usize, classes: usize },
    #[error("invalid partition parameters: {0}")]
    InvalidParams(String),
    #[error("infeasible subset size: {needed} classes per subset requested but only {available} classes exist")]
    InsufficientClasses { needed: usize, available: usize },
    #[error("insufficient images: class `{class}` has {available} images but {needed} per class were requested")]
    InsufficientImages {
        class: String,
        needed: usize,
        available: usize,
    },
    #[error("infeasible candidate pool: no base cluster yields at least {needed} classes (pool sizes per base cluster: {sizes:?})")]
    InfeasiblePool { needed: usize, sizes: Vec<usize> },
    #[error("subset {subset}: retry limit of {retries} base-cluster draws exhausted without a pool of {needed} classes")]
    RetryLimitExhausted {
        subset: usize,
        retries: usize,
        needed: usize,
    },
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("class `{0}` has no embedding")]
    MissingEmbedding(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("materialize: subset {subset}, class `{class}`: {reason}")]
    Materialize {
        subset: usize,
        class: String,
        reason: String,
    },
    #[error("output directory {} is not empty", .0.display())]
    OutputNotEmpty(PathBuf),
    #[error(
        "infeasible perplexity {perplexity} for {n} points: need 1 < perplexity < (n-1)/3 = {bound:.4}"
    )]
    InfeasiblePerplexity {
        perplexity: f64,
        n: usize,
        bound: f64,
    },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("manifest: {0}")]
    Manifest(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by inconsistent user-supplied parameters, as opposed
    /// to failures discovered while running against data.
    pub fn is_invalid_input(&self) -> bool {
        matches!(self, Error::InvalidSynthSpec(_) | Error::InvalidParams(_))
    }
}
