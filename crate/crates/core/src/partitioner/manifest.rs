use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PartitionParams, PartitionPlan, Provenance, SubsetSpec};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT_VERSION: u32 = 1;

/// On-disk form of a [`PartitionPlan`]. Field order here is the key order of
/// the emitted JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub params: PartitionParams,
    pub embedding_digest: Option<String>,
    pub subsets: Vec<SubsetSpec>,
    pub provenance: Provenance,
}

impl From<&PartitionPlan> for Manifest {
    fn from(plan: &PartitionPlan) -> Self {
        Self {
            format_version: MANIFEST_FORMAT_VERSION,
            params: plan.params.clone(),
            embedding_digest: plan.embedding_digest.clone(),
            subsets: plan.subsets.clone(),
            provenance: plan.provenance.clone(),
        }
    }
}

impl From<Manifest> for PartitionPlan {
    fn from(m: Manifest) -> Self {
        Self {
            params: m.params,
            embedding_digest: m.embedding_digest,
            subsets: m.subsets,
            provenance: m.provenance,
        }
    }
}

impl Manifest {
    /// Two-space indented JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest is always serializable");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        if m.format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::Manifest(format!(
                "unsupported format_version {}",
                m.format_version
            )));
        }
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Manifest(m) => Error::Manifest(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn into_plan(self) -> Result<PartitionPlan> {
        let plan = PartitionPlan::from(self);
        plan.validate()?;
        Ok(plan)
    }
}

impl PartitionPlan {
    pub fn to_manifest(&self) -> Manifest {
        Manifest::from(self)
    }

    pub fn manifest_json(&self) -> String {
        self.to_manifest().to_json()
    }
}
