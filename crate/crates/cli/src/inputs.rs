use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use fedsplit::embedding_io::{self, EmbeddingKind, EmbeddingSet, ImageRecord};
use sha2::{Digest, Sha256};

#[derive(Debug)]
pub enum CliError {
    /// Flag combinations or values that cannot work; exit 2.
    Usage(String),
    Core(fedsplit::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_invalid_input() => 2,
            CliError::Core(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => {
                write!(f, "{e}")?;
                let mut source = std::error::Error::source(e);
                while let Some(s) = source {
                    write!(f, ": {s}")?;
                    source = s.source();
                }
                Ok(())
            }
        }
    }
}

impl From<fedsplit::Error> for CliError {
    fn from(e: fedsplit::Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

pub struct LoadedEmbeddings {
    pub path: PathBuf,
    /// Per-class vectors (per-image files are averaged).
    pub classes: EmbeddingSet,
    /// Listing of a per-image file.
    pub listing: Option<Vec<ImageRecord>>,
    /// SHA-256 of the embedding file bytes.
    pub digest: String,
}

fn listing_path(embeddings: &Path, explicit: Option<&Path>) -> CliResult<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.to_path_buf());
    }
    let mut sidecar = embeddings.as_os_str().to_owned();
    sidecar.push(".tsv");
    let candidates = [PathBuf::from(sidecar), embeddings.with_extension("tsv")];
    for c in &candidates {
        if c.is_file() {
            return Ok(c.clone());
        }
    }
    usage(format!(
        "per-image embeddings {} need a listing: pass --listing or place it at {}",
        embeddings.display(),
        candidates[0].display()
    ))
}

pub fn load_embeddings(
    path: &Path,
    listing: Option<&Path>,
    max_images_per_class: usize,
) -> CliResult<LoadedEmbeddings> {
    let bytes = fs::read(path).map_err(|e| fedsplit::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let digest = hex::encode(Sha256::digest(&bytes));
    let set = embedding_io::read_embeddings(bytes.as_slice()).map_err(|e| match e {
        fedsplit::Error::Format(f) => {
            fedsplit::Error::InvalidEmbeddings(format!("{}: {f}", path.display()))
        }
        other => other,
    })?;
    let (classes, listing) = match set.kind() {
        EmbeddingKind::PerClass => (set, None),
        EmbeddingKind::PerImage => {
            let lp = listing_path(path, listing)?;
            let records = embedding_io::read_listing_file(&lp)?;
            let classes =
                embedding_io::mean_class_embeddings(&set, &records, max_images_per_class)?;
            log::info!(
                "averaged {} image embeddings into {} classes (at most {max_images_per_class} per class)",
                set.len(),
                classes.len()
            );
            (classes, Some(records))
        }
    };
    Ok(LoadedEmbeddings {
        path: path.to_path_buf(),
        classes,
        listing,
        digest,
    })
}

/// Creates `dir` if needed.
pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| {
        fedsplit::Error::Io {
            path: dir.to_path_buf(),
            source: e,
        }
        .into()
    })
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| {
        fedsplit::Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}
