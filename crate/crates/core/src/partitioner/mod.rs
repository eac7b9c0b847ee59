//! Subset generation under the random, diverse and similar regimes.
//!
//! Each subset draws from its own random stream derived from `(seed, subset
//! id)`, so plans are reproducible and subsets can be generated in parallel.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{self, ClusterNeighborhood, Clustering, KMeansConfig};
use crate::embedding_io::EmbeddingSet;
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

mod catalog;
mod manifest;
mod materialize;

pub use catalog::Catalog;
pub use manifest::{Manifest, MANIFEST_FILE, MANIFEST_FORMAT_VERSION};
pub use materialize::{materialize, MaterializeSummary};

pub const DEFAULT_RETRY_LIMIT: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    Diverse,
    Similar,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Random => "random",
            Strategy::Diverse => "diverse",
            Strategy::Similar => "similar",
        })
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(Strategy::Random),
            "diverse" => Ok(Strategy::Diverse),
            "similar" => Ok(Strategy::Similar),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CopyMethod {
    Copy,
    Move,
    Symlink,
    ManifestOnly,
}

impl FromStr for CopyMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "copy" => Ok(CopyMethod::Copy),
            "move" => Ok(CopyMethod::Move),
            "symlink" => Ok(CopyMethod::Symlink),
            "manifest-only" | "manifest_only" => Ok(CopyMethod::ManifestOnly),
            other => Err(format!("unknown copy method `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionParams {
    pub strategy: Strategy,
    pub num_subsets: usize,
    pub classes_per_subset: usize,
    pub images_per_class: Option<usize>,
    pub clusters: Option<usize>,
    pub top_k: Option<usize>,
    pub seed: u64,
    pub copy_method: CopyMethod,
    pub retry_limit: usize,
    /// L2-normalize class embeddings before clustering.
    pub normalize_embeddings: bool,
    pub kmeans: KMeansConfig,
}

impl PartitionParams {
    pub fn random(num_subsets: usize, classes_per_subset: usize, seed: u64) -> Self {
        Self {
            strategy: Strategy::Random,
            num_subsets,
            classes_per_subset,
            images_per_class: None,
            clusters: None,
            top_k: None,
            seed,
            copy_method: CopyMethod::ManifestOnly,
            retry_limit: DEFAULT_RETRY_LIMIT,
            normalize_embeddings: false,
            kmeans: KMeansConfig::default(),
        }
    }

    /// Diverse plans take one class per cluster, so `clusters == classes_per_subset`.
    pub fn diverse(num_subsets: usize, classes_per_subset: usize, seed: u64) -> Self {
        Self {
            strategy: Strategy::Diverse,
            clusters: Some(classes_per_subset),
            ..Self::random(num_subsets, classes_per_subset, seed)
        }
    }

    pub fn similar(
        num_subsets: usize,
        classes_per_subset: usize,
        clusters: usize,
        top_k: usize,
        seed: u64,
    ) -> Self {
        Self {
            strategy: Strategy::Similar,
            clusters: Some(clusters),
            top_k: Some(top_k),
            ..Self::random(num_subsets, classes_per_subset, seed)
        }
    }

    pub fn with_images_per_class(mut self, images: usize) -> Self {
        self.images_per_class = Some(images);
        self
    }

    pub fn with_copy_method(mut self, method: CopyMethod) -> Self {
        self.copy_method = method;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if self.num_subsets == 0 {
            return bad("num_subsets must be at least 1".into());
        }
        if self.classes_per_subset == 0 {
            return bad("classes_per_subset must be at least 1".into());
        }
        if self.images_per_class == Some(0) {
            return bad("images_per_class must be at least 1 when given".into());
        }
        if self.retry_limit == 0 {
            return bad("retry_limit must be at least 1".into());
        }
        if self.kmeans.max_iters == 0
            || self.kmeans.tol.is_nan()
            || self.kmeans.tol < 0.0
            || self.kmeans.restarts == 0
        {
            return bad("k-means needs max_iters >= 1, restarts >= 1 and tol >= 0".into());
        }
        match self.strategy {
            Strategy::Random => {
                if self.clusters.is_some() || self.top_k.is_some() {
                    return bad(
                        "clusters and top_k only apply to the diverse and similar strategies"
                            .into(),
                    );
                }
            }
            Strategy::Diverse => {
                if self.top_k.is_some() {
                    return bad("top_k only applies to the similar strategy".into());
                }
                match self.clusters {
                    Some(k) if k == self.classes_per_subset => {}
                    Some(k) => {
                        return bad(format!(
                            "diverse strategy takes one class per cluster, so clusters ({k}) must equal classes_per_subset ({})",
                            self.classes_per_subset
                        ))
                    }
                    None => return bad("diverse strategy requires clusters".into()),
                }
            }
            Strategy::Similar => {
                match self.clusters {
                    Some(k) if k >= 2 => {}
                    Some(k) => {
                        return bad(format!("similar strategy requires clusters >= 2, got {k}"))
                    }
                    None => return bad("similar strategy requires clusters".into()),
                }
                match self.top_k {
                    Some(t) if t >= 1 => {}
                    _ => return bad("similar strategy requires top_k >= 1".into()),
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetSpec {
    pub id: usize,
    /// Sorted, distinct.
    pub classes: Vec<String>,
    /// Sorted relative image paths per class.
    pub images: BTreeMap<String, Vec<String>>,
    /// Base cluster drawn by the similar strategy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_cluster: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringSummary {
    pub k: usize,
    pub inertia: f64,
    pub iterations: usize,
    pub sizes: Vec<usize>,
    pub assignment: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neighborhood: Option<ClusterNeighborhood>,
}

impl ClusteringSummary {
    fn new(clustering: &Clustering, neighborhood: Option<ClusterNeighborhood>) -> Self {
        Self {
            k: clustering.k(),
            inertia: clustering.inertia(),
            iterations: clustering.iterations(),
            sizes: clustering.sizes(),
            assignment: clustering.assignment_map(),
            neighborhood,
        }
    }
}

/// Input locations as given on the command line, recorded so a plan can be
/// regenerated from its manifest.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRecord {
    pub dataset: Option<String>,
    pub embeddings: Option<String>,
    pub max_images_per_class: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    /// Every class the plan could have drawn from, sorted.
    pub class_universe: Vec<String>,
    pub clustering: Option<ClusteringSummary>,
    pub inputs: InputRecord,
    /// Only set on request; a timestamp makes manifests non-reproducible.
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub params: PartitionParams,
    pub embedding_digest: Option<String>,
    pub subsets: Vec<SubsetSpec>,
    pub provenance: Provenance,
}

impl PartitionPlan {
    fn new(
        params: &PartitionParams,
        subsets: Vec<SubsetSpec>,
        class_universe: Vec<String>,
        clustering: Option<ClusteringSummary>,
    ) -> Self {
        Self {
            params: params.clone(),
            embedding_digest: None,
            subsets,
            provenance: Provenance {
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                class_universe,
                clustering,
                inputs: InputRecord::default(),
                timestamp: None,
            },
        }
    }

    pub fn num_subsets(&self) -> usize {
        self.subsets.len()
    }

    /// Structural invariants: N subsets with sequential ids, S distinct classes
    /// each, and I distinct images per class when I is set.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Manifest(m));
        if self.subsets.len() != self.params.num_subsets {
            return bad(format!(
                "{} subsets recorded but num_subsets is {}",
                self.subsets.len(),
                self.params.num_subsets
            ));
        }
        for (i, s) in self.subsets.iter().enumerate() {
            if s.id != i {
                return bad(format!("subset at position {i} has id {}", s.id));
            }
            if s.classes.len() != self.params.classes_per_subset {
                return bad(format!("subset {i} has {} classes", s.classes.len()));
            }
            if s.classes.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("subset {i}: classes are not sorted and distinct"));
            }
            if let Some(n) = self.params.images_per_class {
                for c in &s.classes {
                    let imgs = s.images.get(c).map(Vec::as_slice).unwrap_or(&[]);
                    if imgs.len() != n || imgs.windows(2).any(|w| w[0] >= w[1]) {
                        return bad(format!(
                            "subset {i}, class `{c}`: expected {n} distinct images"
                        ));
                    }
                    if imgs.iter().any(|p| !p.starts_with(&format!("{c}/"))) {
                        return bad(format!(
                            "subset {i}, class `{c}`: image outside its class folder"
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_image_counts(
    catalog: &Catalog,
    classes: &[String],
    params: &PartitionParams,
) -> Result<()> {
    if let Some(needed) = params.images_per_class {
        for c in classes {
            let available = catalog.images(c).len();
            if available < needed {
                return Err(Error::InsufficientImages {
                    class: c.clone(),
                    needed,
                    available,
                });
            }
        }
    }
    Ok(())
}

fn draw_images(
    rng: &mut StreamRng,
    catalog: &Catalog,
    classes: &[String],
    params: &PartitionParams,
) -> BTreeMap<String, Vec<String>> {
    classes
        .iter()
        .map(|c| {
            let all = catalog.images(c);
            let mut chosen = match params.images_per_class {
                Some(n) => rng::sample_without_replacement(rng, all, n),
                None => all.to_vec(),
            };
            chosen.sort();
            (c.clone(), chosen)
        })
        .collect()
}

fn generate_subsets<F>(params: &PartitionParams, draw: F) -> Result<Vec<SubsetSpec>>
where
    F: Fn(usize, &mut StreamRng) -> Result<SubsetSpec> + Sync,
{
    (0..params.num_subsets)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(params.seed, rng::subset_stream(i));
            draw(i, &mut rng)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// Uniform draws of S classes without replacement, independently per subset.
pub fn generate_random(catalog: &Catalog, params: &PartitionParams) -> Result<PartitionPlan> {
    params.validate()?;
    if params.strategy != Strategy::Random {
        return Err(Error::InvalidParams(format!(
            "expected random strategy, got {}",
            params.strategy
        )));
    }
    let classes = catalog.class_names();
    let s = params.classes_per_subset;
    if classes.len() < s {
        return Err(Error::InsufficientClasses {
            needed: s,
            available: classes.len(),
        });
    }
    check_image_counts(catalog, &classes, params)?;
    let subsets = generate_subsets(params, |id, rng| {
        let mut chosen = rng::sample_without_replacement(rng, &classes, s);
        chosen.sort();
        let images = draw_images(rng, catalog, &chosen, params);
        Ok(SubsetSpec {
            id,
            classes: chosen,
            images,
            base_cluster: None,
        })
    })?;
    Ok(PartitionPlan::new(params, subsets, classes, None))
}

/// Embeddings of the classes to cluster, sorted by name, possibly normalized.
fn clustering_input(
    catalog: &Catalog,
    embeddings: &EmbeddingSet,
    params: &PartitionParams,
) -> Result<EmbeddingSet> {
    if let Some(missing) = embeddings.names().iter().find(|c| !catalog.contains(c)) {
        return Err(Error::Dataset(format!(
            "embedded class `{missing}` has no folder in the dataset"
        )));
    }
    let mut entries: Vec<(String, Vec<f32>)> = embeddings
        .iter()
        .map(|(n, v)| (n.to_string(), v.to_vec()))
        .collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    let sorted = EmbeddingSet::new(embeddings.kind(), embeddings.dim(), entries)?;
    Ok(if params.normalize_embeddings {
        sorted.l2_normalized()
    } else {
        sorted
    })
}

/// Clusters the embedded classes and draws one class uniformly from each
/// cluster per subset.
pub fn generate_diverse(
    catalog: &Catalog,
    embeddings: &EmbeddingSet,
    params: &PartitionParams,
) -> Result<PartitionPlan> {
    params.validate()?;
    if params.strategy != Strategy::Diverse {
        return Err(Error::InvalidParams(format!(
            "expected diverse strategy, got {}",
            params.strategy
        )));
    }
    let k = params.clusters.expect("validated");
    let input = clustering_input(catalog, embeddings, params)?;
    let clustering = clustering::kmeans(&input, k, params.seed, &params.kmeans)?;
    let members = clustering.members();
    let universe = input.names().to_vec();
    check_image_counts(catalog, &universe, params)?;
    let subsets = generate_subsets(params, |id, rng| {
        let mut chosen: Vec<String> = members
            .iter()
            .map(|m| m[rng::uniform_index(rng, m.len())].clone())
            .collect();
        chosen.sort();
        let images = draw_images(rng, catalog, &chosen, params);
        Ok(SubsetSpec {
            id,
            classes: chosen,
            images,
            base_cluster: None,
        })
    })?;
    let summary = ClusteringSummary::new(&clustering, None);
    Ok(PartitionPlan::new(params, subsets, universe, Some(summary)))
}

/// Candidate pool of every base cluster: its own members plus those of its
/// top-k neighbors, sorted.
pub fn candidate_pools(
    clustering: &Clustering,
    neighborhood: &ClusterNeighborhood,
) -> Vec<Vec<String>> {
    let members = clustering.members();
    (0..clustering.k())
        .map(|b| {
            let mut pool = members[b].clone();
            for n in neighborhood.of(b) {
                pool.extend(members[n.cluster].iter().cloned());
            }
            pool.sort();
            pool
        })
        .collect()
}

/// Clusters the embedded classes, then samples each subset from the pool of a
/// uniformly drawn base cluster and its most similar clusters. Base clusters
/// whose pool is smaller than S are redrawn up to `retry_limit` times.
pub fn generate_similar(
    catalog: &Catalog,
    embeddings: &EmbeddingSet,
    params: &PartitionParams,
) -> Result<PartitionPlan> {
    params.validate()?;
    if params.strategy != Strategy::Similar {
        return Err(Error::InvalidParams(format!(
            "expected similar strategy, got {}",
            params.strategy
        )));
    }
    let k = params.clusters.expect("validated");
    let top_k = params.top_k.expect("validated");
    let s = params.classes_per_subset;
    let input = clustering_input(catalog, embeddings, params)?;
    let clustering = clustering::kmeans(&input, k, params.seed, &params.kmeans)?;
    let neighborhood = clustering::top_k_similar_clusters(&clustering, top_k);
    let pools = candidate_pools(&clustering, &neighborhood);
    if pools.iter().all(|p| p.len() < s) {
        return Err(Error::InfeasiblePool {
            needed: s,
            sizes: pools.iter().map(Vec::len).collect(),
        });
    }
    let universe = input.names().to_vec();
    check_image_counts(catalog, &universe, params)?;
    let subsets = generate_subsets(params, |id, rng| {
        for _ in 0..params.retry_limit {
            let base = rng::uniform_index(rng, k);
            let pool = &pools[base];
            if pool.len() < s {
                continue;
            }
            let mut chosen = rng::sample_without_replacement(rng, pool, s);
            chosen.sort();
            let images = draw_images(rng, catalog, &chosen, params);
            return Ok(SubsetSpec {
                id,
                classes: chosen,
                images,
                base_cluster: Some(base),
            });
        }
        Err(Error::RetryLimitExhausted {
            subset: id,
            retries: params.retry_limit,
            needed: s,
        })
    })?;
    let summary = ClusteringSummary::new(&clustering, Some(neighborhood));
    Ok(PartitionPlan::new(params, subsets, universe, Some(summary)))
}

/// Dispatches on `params.strategy`. Embeddings are required for the diverse
/// and similar strategies.
pub fn generate(
    catalog: &Catalog,
    embeddings: Option<&EmbeddingSet>,
    params: &PartitionParams,
) -> Result<PartitionPlan> {
    match (params.strategy, embeddings) {
        (Strategy::Random, _) => generate_random(catalog, params),
        (Strategy::Diverse, Some(e)) => generate_diverse(catalog, e, params),
        (Strategy::Similar, Some(e)) => generate_similar(catalog, e, params),
        (strategy, None) => Err(Error::InvalidParams(format!(
            "embeddings required for the {strategy} strategy"
        ))),
    }
}
