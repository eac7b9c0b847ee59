use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::embedding_io::ImageRecord;
use crate::error::{Error, Result};

/// Class folders of a dataset and the images in each, both sorted
/// lexicographically. Image paths are relative to the dataset root and use
/// forward slashes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Catalog {
    classes: BTreeMap<String, Vec<String>>,
}

fn utf8_name(path: &Path) -> Result<String> {
    path.file_name()
        .and_then(|n| n.to_str())
        .map(str::to_owned)
        .ok_or_else(|| Error::Dataset(format!("{} is not a UTF-8 file name", path.display())))
}

impl Catalog {
    /// Lists `root/<class>/<file>`. Dot-files are skipped, as are nested
    /// directories inside class folders.
    pub fn scan(root: &Path) -> Result<Self> {
        let mut classes = BTreeMap::new();
        let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(root, e))?;
            let path = entry.path();
            let class = utf8_name(&path)?;
            if class.starts_with('.') || !path.is_dir() {
                continue;
            }
            let mut images = Vec::new();
            for file in fs::read_dir(&path).map_err(|e| Error::io(&path, e))? {
                let file = file.map_err(|e| Error::io(&path, e))?;
                let fpath = file.path();
                let name = utf8_name(&fpath)?;
                if name.starts_with('.') || !fpath.is_file() {
                    continue;
                }
                images.push(format!("{class}/{name}"));
            }
            images.sort();
            classes.insert(class, images);
        }
        Ok(Self { classes })
    }

    pub fn from_listing(records: &[ImageRecord]) -> Self {
        let mut classes: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for r in records {
            classes
                .entry(r.class_name.clone())
                .or_default()
                .push(r.relative_path.clone());
        }
        classes.values_mut().for_each(|v| v.sort());
        Self { classes }
    }

    /// Catalog of classes with no images, for plans that only select classes.
    pub fn from_class_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            classes: names.into_iter().map(|n| (n.into(), Vec::new())).collect(),
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.keys().cloned().collect()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn contains(&self, class: &str) -> bool {
        self.classes.contains_key(class)
    }

    pub fn images(&self, class: &str) -> &[String] {
        self.classes.get(class).map(Vec::as_slice).unwrap_or(&[])
    }
}
