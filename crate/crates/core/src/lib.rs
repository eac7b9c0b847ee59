//! Class-level partitioning of image datasets into federated client subsets.

pub mod clustering;
pub mod embedding_io;
mod error;
pub mod metrics;
pub mod partitioner;
pub mod projection;
pub mod rng;
pub mod synth;

pub use embedding_io::{EmbeddingKind, EmbeddingSet, ImageRecord};
pub use error::{Error, FormatError, Result};
pub use partitioner::{PartitionParams, PartitionPlan, Strategy};
