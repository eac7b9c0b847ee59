//! Deterministic synthetic class embeddings and placeholder image datasets.

use std::fs;
use std::path::Path;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding_io::{EmbeddingKind, EmbeddingSet, ImageRecord};
use crate::error::{Error, Result};
use crate::rng;

/// Rejection-sampling budget per anchor.
pub const MAX_ANCHOR_RETRIES: usize = 1000;

/// Size of each placeholder image file in bytes.
pub const PLACEHOLDER_BYTES: usize = 64;

const ANCHOR_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;
const IMAGE_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub num_latent_clusters: usize,
    pub within_cluster_stddev: f64,
    pub between_cluster_separation: f64,
    pub seed: u64,
    pub images_per_class: usize,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidSynthSpec(m));
        if self.num_classes == 0
            || self.dim == 0
            || self.num_latent_clusters == 0
            || self.images_per_class == 0
        {
            return fail(
                "num_classes, dim, num_latent_clusters and images_per_class must be positive"
                    .into(),
            );
        }
        if self.num_latent_clusters > self.num_classes {
            return fail(format!(
                "num_latent_clusters ({}) exceeds num_classes ({})",
                self.num_latent_clusters, self.num_classes
            ));
        }
        if !(self.between_cluster_separation.is_finite() && self.between_cluster_separation > 0.0) {
            return fail("between_cluster_separation must be a positive finite number".into());
        }
        if !(self.within_cluster_stddev.is_finite() && self.within_cluster_stddev >= 0.0) {
            return fail("within_cluster_stddev must be non-negative and finite".into());
        }
        if self.within_cluster_stddev >= self.between_cluster_separation {
            return fail(format!(
                "within_cluster_stddev ({}) must be below between_cluster_separation ({})",
                self.within_cluster_stddev, self.between_cluster_separation
            ));
        }
        Ok(())
    }

    /// Anchors live on a sphere of this radius around the origin.
    pub fn anchor_radius(&self) -> f64 {
        self.between_cluster_separation
    }

    /// Latent cluster of class `i` (round-robin).
    pub fn latent_cluster_of(&self, class_index: usize) -> usize {
        class_index % self.num_latent_clusters
    }

    pub fn class_name(&self, class_index: usize) -> String {
        let width = self.num_classes.saturating_sub(1).to_string().len().max(3);
        format!("class_{class_index:0width$}")
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.num_classes).map(|i| self.class_name(i)).collect()
    }
}

fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Cluster anchors with pairwise distance at least the separation.
pub fn synth_anchors(spec: &SynthSpec) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, ANCHOR_STREAM);
    let radius = spec.anchor_radius();
    let mut anchors: Vec<Vec<f64>> = Vec::with_capacity(spec.num_latent_clusters);
    while anchors.len() < spec.num_latent_clusters {
        let mut placed = false;
        for _ in 0..MAX_ANCHOR_RETRIES {
            let mut v = gaussian_vector(&mut rng, spec.dim);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            v.iter_mut().for_each(|x| *x *= radius / norm);
            if anchors
                .iter()
                .all(|a| distance(a, &v) >= spec.between_cluster_separation)
            {
                anchors.push(v);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::SeparationInfeasible {
                placed: anchors.len(),
                clusters: spec.num_latent_clusters,
                separation: spec.between_cluster_separation,
                retries: MAX_ANCHOR_RETRIES,
            });
        }
    }
    Ok(anchors)
}

/// Per-class embeddings: anchor of the class's latent cluster plus isotropic
/// Gaussian noise with per-component standard deviation
/// `within_cluster_stddev`.
pub fn synth_class_embeddings(spec: &SynthSpec) -> Result<EmbeddingSet> {
    let anchors = synth_anchors(spec)?;
    let mut rng = rng::stream(spec.seed, NOISE_STREAM);
    let entries = (0..spec.num_classes)
        .map(|i| {
            let anchor = &anchors[spec.latent_cluster_of(i)];
            let noise = gaussian_vector(&mut rng, spec.dim);
            let v = anchor
                .iter()
                .zip(noise)
                .map(|(a, n)| (a + spec.within_cluster_stddev * n) as f32)
                .collect();
            (spec.class_name(i), v)
        })
        .collect();
    EmbeddingSet::new(EmbeddingKind::PerClass, spec.dim, entries)
}

pub fn image_file_name(image_index: usize) -> String {
    format!("img_{image_index:04}.bin")
}

/// Writes `root/<class>/<img>` placeholder files and returns the listing in
/// lexicographic path order.
///
/// The first 16 bytes of each file encode (class, image) indices, so contents
/// are unique; the remaining bytes come from the seeded stream.
pub fn synth_image_dataset(spec: &SynthSpec, root: &Path) -> Result<Vec<ImageRecord>> {
    spec.validate()?;
    if root.exists() {
        let mut entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
        if entries.next().is_some() {
            return Err(Error::OutputNotEmpty(root.to_path_buf()));
        }
    } else {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    }
    let mut rng = rng::stream(spec.seed, IMAGE_STREAM);
    let mut records = Vec::with_capacity(spec.num_classes * spec.images_per_class);
    for class_index in 0..spec.num_classes {
        let class = spec.class_name(class_index);
        let dir = root.join(&class);
        fs::create_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        for image_index in 0..spec.images_per_class {
            let mut bytes = [0u8; PLACEHOLDER_BYTES];
            bytes[..8].copy_from_slice(&(class_index as u64).to_le_bytes());
            bytes[8..16].copy_from_slice(&(image_index as u64).to_le_bytes());
            rng.fill_bytes(&mut bytes[16..]);
            let name = image_file_name(image_index);
            let path = dir.join(&name);
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            records.push(ImageRecord {
                class_name: class.clone(),
                relative_path: format!("{class}/{name}"),
                embedding_index: None,
            });
        }
    }
    records.sort_by(|a, b| a.relative_path.cmp(&b.relative_path));
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn spec(classes: usize, clusters: usize, stddev: f64, seed: u64) -> SynthSpec {
        SynthSpec {
            num_classes: classes,
            dim: 16,
            num_latent_clusters: clusters,
            within_cluster_stddev: stddev,
            between_cluster_separation: 1.0,
            seed,
            images_per_class: 2,
        }
    }

    #[test]
    fn zero_noise_collapses_clusters() {
        let s = spec(12, 4, 0.0, 1);
        let set = synth_class_embeddings(&s).unwrap();
        for i in 0..12 {
            for j in 0..12 {
                if s.latent_cluster_of(i) == s.latent_cluster_of(j) {
                    assert_eq!(set.vector(i), set.vector(j));
                }
            }
        }
    }

    #[test]
    fn singleton_clusters_are_separated() {
        let s = spec(20, 20, 0.0, 3);
        let set = synth_class_embeddings(&s).unwrap();
        for i in 0..20 {
            for j in (i + 1)..20 {
                let d: f64 = set
                    .vector(i)
                    .iter()
                    .zip(set.vector(j))
                    .map(|(a, b)| ((a - b) as f64).powi(2))
                    .sum::<f64>()
                    .sqrt();
                // f32 rounding of the stored coordinates.
                assert!(d >= 1.0 - 1e-5, "{d}");
            }
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let s = SynthSpec {
            dim: 32,
            ..spec(100, 15, 0.1, 7)
        };
        let a = synth_class_embeddings(&s).unwrap();
        let b = synth_class_embeddings(&s).unwrap();
        assert_eq!(a, b);
        let mut ba = Vec::new();
        let mut bb = Vec::new();
        crate::embedding_io::write_embeddings(&a, &mut ba).unwrap();
        crate::embedding_io::write_embeddings(&b, &mut bb).unwrap();
        assert_eq!(ba, bb);
    }

    #[test]
    fn spec_validation() {
        assert!(spec(10, 15, 0.1, 0).validate().is_err());
        assert!(spec(10, 5, 1.0, 0).validate().is_err());
        assert!(spec(10, 5, 0.99, 0).validate().is_ok());
        let err = synth_class_embeddings(&spec(10, 15, 0.1, 0)).unwrap_err();
        assert!(err.is_invalid_input());
    }

    #[test]
    fn infeasible_separation_fails_loudly() {
        // A 0-sphere holds only two points at distance 2r.
        let s = SynthSpec {
            dim: 1,
            ..spec(5, 3, 0.0, 0)
        };
        assert!(matches!(
            synth_class_embeddings(&s),
            Err(Error::SeparationInfeasible { placed: 2, .. })
        ));
    }

    #[test]
    fn image_dataset_counts() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("ds");
        let records = synth_image_dataset(&spec(3, 1, 0.0, 0), &root).unwrap();
        assert_eq!(records.len(), 6);
        let folders = fs::read_dir(&root).unwrap().count();
        assert_eq!(folders, 3);
        let mut files = 0;
        for r in &records {
            let bytes = fs::read(root.join(&r.relative_path)).unwrap();
            assert_eq!(bytes.len(), PLACEHOLDER_BYTES);
            files += 1;
        }
        assert_eq!(files, 6);
        assert!(synth_image_dataset(&spec(3, 1, 0.0, 0), &root).is_err());
    }

    #[test]
    fn seed_changes_contents_not_names() {
        let dir = tempfile::tempdir().unwrap();
        let a = synth_image_dataset(&spec(3, 1, 0.0, 1), &dir.path().join("a")).unwrap();
        let b = synth_image_dataset(&spec(3, 1, 0.0, 2), &dir.path().join("b")).unwrap();
        assert_eq!(a, b);
        for r in &a {
            let x = fs::read(dir.path().join("a").join(&r.relative_path)).unwrap();
            let y = fs::read(dir.path().join("b").join(&r.relative_path)).unwrap();
            assert_ne!(x, y);
        }
    }

    #[test]
    fn large_listing_paths_unique_and_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let s = SynthSpec {
            images_per_class: 20,
            ..spec(100, 15, 0.1, 4)
        };
        let records = synth_image_dataset(&s, &dir.path().join("ds")).unwrap();
        assert_eq!(records.len(), 2000);
        let unique: HashSet<_> = records.iter().map(|r| &r.relative_path).collect();
        assert_eq!(unique.len(), 2000);
        assert!(records
            .windows(2)
            .all(|w| w[0].relative_path < w[1].relative_path));
        let contents: HashSet<Vec<u8>> = records
            .iter()
            .map(|r| fs::read(dir.path().join("ds").join(&r.relative_path)).unwrap())
            .collect();
        assert_eq!(contents.len(), 2000);
    }
}
