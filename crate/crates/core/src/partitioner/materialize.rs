use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{CopyMethod, Manifest, PartitionPlan, SubsetSpec, MANIFEST_FILE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MaterializeSummary {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    /// Files copied, moved or linked.
    pub files_placed: usize,
}

fn prepare_output(output_root: &Path) -> Result<()> {
    if output_root.exists() {
        let mut entries = fs::read_dir(output_root).map_err(|e| Error::io(output_root, e))?;
        if entries.next().is_some() {
            return Err(Error::OutputNotEmpty(output_root.to_path_buf()));
        }
        Ok(())
    } else {
        fs::create_dir_all(output_root).map_err(|e| Error::io(output_root, e))
    }
}

fn subset_dir(output_root: &Path, id: usize) -> PathBuf {
    output_root.join(format!("subset_{id}"))
}

fn file_name(relative: &str) -> &str {
    relative.rsplit('/').next().unwrap_or(relative)
}

fn check_sources(plan: &PartitionPlan, dataset_root: &Path) -> Result<()> {
    for subset in &plan.subsets {
        for class in &subset.classes {
            if !dataset_root.join(class).is_dir() {
                return Err(Error::Materialize {
                    subset: subset.id,
                    class: class.clone(),
                    reason: format!(
                        "missing class folder {}",
                        dataset_root.join(class).display()
                    ),
                });
            }
            for rel in subset.images.get(class).into_iter().flatten() {
                let src = dataset_root.join(rel);
                if !src.is_file() {
                    return Err(Error::Materialize {
                        subset: subset.id,
                        class: class.clone(),
                        reason: format!("missing image {}", src.display()),
                    });
                }
            }
        }
    }
    Ok(())
}

#[cfg(unix)]
fn link(src: &Path, dst: &Path) -> io::Result<()> {
    std::os::unix::fs::symlink(src, dst)
}

#[cfg(windows)]
fn link(src: &Path, dst: &Path) -> io::Result<()> {
    std::os::windows::fs::symlink_file(src, dst)
}

fn place_subset(
    subset: &SubsetSpec,
    method: CopyMethod,
    dataset_root: &Path,
    output_root: &Path,
) -> Result<usize> {
    let mut placed = 0;
    for class in &subset.classes {
        let dir = subset_dir(output_root, subset.id).join(class);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for rel in subset.images.get(class).into_iter().flatten() {
            let src = dataset_root.join(rel);
            let dst = dir.join(file_name(rel));
            let res = match method {
                CopyMethod::Copy => fs::copy(&src, &dst).map(|_| ()),
                CopyMethod::Symlink => link(&src, &dst),
                CopyMethod::Move => fs::rename(&src, &dst),
                CopyMethod::ManifestOnly => unreachable!("manifest-only places no files"),
            };
            res.map_err(|e| Error::Materialize {
                subset: subset.id,
                class: class.clone(),
                reason: format!("{} -> {}: {e}", src.display(), dst.display()),
            })?;
            placed += 1;
        }
    }
    Ok(placed)
}

/// Writes `output_root/subset_<id>/<class>/<file>` trees and
/// `output_root/manifest.json`.
///
/// `output_root` must be empty or absent. `move` relocates source files, so it
/// additionally needs `allow_destructive` and every image may belong to at
/// most one subset.
pub fn materialize(
    plan: &PartitionPlan,
    dataset_root: &Path,
    output_root: &Path,
    allow_destructive: bool,
) -> Result<MaterializeSummary> {
    let method = plan.params.copy_method;
    if method == CopyMethod::Move && !allow_destructive {
        return Err(Error::InvalidParams(
            "copy method `move` mutates the source dataset and needs an explicit destructive acknowledgment".into(),
        ));
    }
    plan.validate()?;
    if method != CopyMethod::ManifestOnly {
        check_sources(plan, dataset_root)?;
    }
    if method == CopyMethod::Move {
        let mut owner: HashMap<&str, usize> = HashMap::new();
        for subset in &plan.subsets {
            for rel in subset.images.values().flatten() {
                if let Some(first) = owner.insert(rel, subset.id) {
                    return Err(Error::Materialize {
                        subset: subset.id,
                        class: rel.split('/').next().unwrap_or_default().to_string(),
                        reason: format!("image {rel} is already moved into subset {first}; move needs disjoint subsets"),
                    });
                }
            }
        }
    }
    prepare_output(output_root)?;

    // Symlinks point at absolute source paths so they resolve from anywhere.
    let source_root = if method == CopyMethod::Symlink {
        fs::canonicalize(dataset_root).map_err(|e| Error::io(dataset_root, e))?
    } else {
        dataset_root.to_path_buf()
    };
    let files_placed = match method {
        CopyMethod::ManifestOnly => 0,
        CopyMethod::Move => plan
            .subsets
            .iter()
            .map(|s| place_subset(s, method, &source_root, output_root))
            .sum::<Result<usize>>()?,
        CopyMethod::Copy | CopyMethod::Symlink => plan
            .subsets
            .par_iter()
            .map(|s| place_subset(s, method, &source_root, output_root))
            .collect::<Vec<_>>()
            .into_iter()
            .sum::<Result<usize>>()?,
    };

    let manifest = plan.to_manifest();
    let manifest_path = output_root.join(MANIFEST_FILE);
    manifest.write(&manifest_path)?;
    Ok(MaterializeSummary {
        manifest,
        manifest_path,
        files_placed,
    })
}
