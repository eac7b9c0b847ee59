//! K-means over class embeddings and centroid-similarity neighborhoods.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding_io::EmbeddingSet;
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

pub const DEFAULT_MAX_ITERS: usize = 300;
pub const DEFAULT_TOL: f64 = 1e-4;
pub const DEFAULT_RESTARTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub max_iters: usize,
    /// Stop once the largest centroid shift (Euclidean) falls below this.
    pub tol: f64,
    /// Independent k-means++ initializations; the lowest-inertia run wins.
    pub restarts: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
            restarts: DEFAULT_RESTARTS,
        }
    }
}

/// Result of k-means over plain points.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after every Lloyd iteration of the winning run.
    pub inertia_trace: Vec<f64>,
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Index drawn with probability proportional to `weights`.
fn draw_weighted(weights: &[f64], total: f64, rng: &mut StreamRng) -> usize {
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if w > 0.0 && acc > target {
            return i;
        }
    }
    // Rounding can leave the target past the last positive weight.
    weights
        .iter()
        .rposition(|&w| w > 0.0)
        .unwrap_or(weights.len() - 1)
}

/// Greedy k-means++: each new center is the best of `2 + ⌊ln k⌋` D²-weighted
/// candidates, judged by the potential it leaves.
fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut StreamRng) -> Vec<Vec<f64>> {
    let n = points.len();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centroids = vec![points[rng::uniform_index(rng, n)].clone()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let (next, next_d2) = if total > 0.0 {
            let mut best: Option<(usize, Vec<f64>, f64)> = None;
            for _ in 0..trials {
                let cand = draw_weighted(&d2, total, rng);
                let reduced: Vec<f64> = d2
                    .iter()
                    .zip(points)
                    .map(|(&w, p)| w.min(squared_distance(p, &points[cand])))
                    .collect();
                let potential: f64 = reduced.iter().sum();
                if best.as_ref().is_none_or(|b| potential < b.2) {
                    best = Some((cand, reduced, potential));
                }
            }
            let (i, reduced, _) = best.expect("at least one trial");
            (i, reduced)
        } else {
            (rng::uniform_index(rng, n), d2.clone())
        };
        centroids.push(points[next].clone());
        d2 = next_d2;
    }
    centroids
}

fn assign_all(points: &[Vec<f64>], centroids: &[Vec<f64>], assignment: &mut [usize]) {
    for (a, p) in assignment.iter_mut().zip(points) {
        *a = nearest(p, centroids).0;
    }
}

/// Fills empty clusters by moving the point farthest from its centroid
/// (among clusters with at least two members) into each empty cluster.
fn repair_empty(points: &[Vec<f64>], centroids: &mut [Vec<f64>], assignment: &mut [usize]) {
    let k = centroids.len();
    let mut sizes = vec![0usize; k];
    for &a in assignment.iter() {
        sizes[a] += 1;
    }
    while let Some(empty) = sizes.iter().position(|&s| s == 0) {
        let mut far = None;
        let mut far_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            let c = assignment[i];
            if sizes[c] < 2 {
                continue;
            }
            let d = squared_distance(p, &centroids[c]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let i = far.expect("k <= n guarantees a donor cluster");
        sizes[assignment[i]] -= 1;
        assignment[i] = empty;
        sizes[empty] = 1;
        centroids[empty] = points[i].clone();
    }
}

fn means(points: &[Vec<f64>], assignment: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0f64; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignment) {
        counts[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(p) {
            *s += x;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        debug_assert!(c > 0);
        s.iter_mut().for_each(|x| *x /= c as f64);
    }
    sums
}

fn inertia_of(points: &[Vec<f64>], assignment: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &a)| squared_distance(p, &centroids[a]))
        .sum()
}

fn lloyd(points: &[Vec<f64>], k: usize, config: &KMeansConfig, rng: &mut StreamRng) -> KMeansFit {
    let mut centroids = plus_plus_init(points, k, rng);
    let mut assignment = vec![0usize; points.len()];
    assign_all(points, &centroids, &mut assignment);
    repair_empty(points, &mut centroids, &mut assignment);
    let mut trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..config.max_iters.max(1) {
        iterations += 1;
        let updated = means(points, &assignment, k);
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| squared_distance(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        trace.push(inertia_of(points, &assignment, &centroids));
        if shift < config.tol || shift == 0.0 || iterations >= config.max_iters {
            break;
        }
        assign_all(points, &centroids, &mut assignment);
        repair_empty(points, &mut centroids, &mut assignment);
    }
    KMeansFit {
        inertia: *trace.last().unwrap(),
        assignment,
        centroids,
        iterations,
        inertia_trace: trace,
    }
}

/// Relabels clusters in order of first appearance along the point order.
fn canonicalize(mut fit: KMeansFit, k: usize) -> KMeansFit {
    let mut relabel = vec![usize::MAX; k];
    let mut next = 0;
    for &a in &fit.assignment {
        if relabel[a] == usize::MAX {
            relabel[a] = next;
            next += 1;
        }
    }
    let mut centroids = vec![Vec::new(); k];
    for (old, c) in fit.centroids.into_iter().enumerate() {
        centroids[relabel[old]] = c;
    }
    fit.assignment.iter_mut().for_each(|a| *a = relabel[*a]);
    fit.centroids = centroids;
    fit
}

/// K-means on raw points with greedy k-means++ initialization.
pub fn kmeans_points(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    config: &KMeansConfig,
) -> Result<KMeansFit> {
    if k == 0 || k > points.len() {
        return Err(Error::InfeasibleK {
            k,
            classes: points.len(),
        });
    }
    if points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::InvalidEmbeddings(
            "k-means input is not finite".into(),
        ));
    }
    let mut rng = rng::stream(seed, rng::CLUSTERING_STREAM);
    let mut best: Option<KMeansFit> = None;
    for _ in 0..config.restarts.max(1) {
        let fit = lloyd(points, k, config, &mut rng);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(canonicalize(best.unwrap(), k))
}

/// Assignment of named classes to clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    classes: Vec<String>,
    fit: KMeansFit,
    k: usize,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn assignment(&self) -> &[usize] {
        &self.fit.assignment
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.fit.centroids
    }

    pub fn inertia(&self) -> f64 {
        self.fit.inertia
    }

    pub fn iterations(&self) -> usize {
        self.fit.iterations
    }

    pub fn inertia_trace(&self) -> &[f64] {
        &self.fit.inertia_trace
    }

    pub fn cluster_of(&self, class: &str) -> Option<usize> {
        self.classes
            .iter()
            .position(|c| c == class)
            .map(|i| self.fit.assignment[i])
    }

    /// Members of every cluster, each list in class order.
    pub fn members(&self) -> Vec<Vec<String>> {
        let mut members = vec![Vec::new(); self.k];
        for (c, &a) in self.classes.iter().zip(&self.fit.assignment) {
            members[a].push(c.clone());
        }
        members
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.fit.assignment {
            sizes[a] += 1;
        }
        sizes
    }

    pub fn assignment_map(&self) -> BTreeMap<String, usize> {
        self.classes
            .iter()
            .cloned()
            .zip(self.fit.assignment.iter().copied())
            .collect()
    }
}

pub fn kmeans(
    classes: &EmbeddingSet,
    k: usize,
    seed: u64,
    config: &KMeansConfig,
) -> Result<Clustering> {
    let points = classes.to_f64_rows();
    let fit = kmeans_points(&points, k, seed, config)?;
    Ok(Clustering {
        classes: classes.names().to_vec(),
        fit,
        k,
    })
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb).sqrt()).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub cluster: usize,
    pub similarity: f64,
}

/// Per cluster, the most similar other clusters by centroid cosine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterNeighborhood {
    pub top_k: usize,
    pub neighbors: Vec<Vec<Neighbor>>,
}

impl ClusterNeighborhood {
    pub fn of(&self, cluster: usize) -> &[Neighbor] {
        &self.neighbors[cluster]
    }
}

pub fn top_k_similar_centroids(centroids: &[Vec<f64>], top_k: usize) -> ClusterNeighborhood {
    let neighbors = centroids
        .iter()
        .enumerate()
        .map(|(k, gk)| {
            let mut scored: Vec<Neighbor> = centroids
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .map(|(j, gj)| Neighbor {
                    cluster: j,
                    similarity: cosine_similarity(gk, gj),
                })
                .collect();
            scored.sort_by(|a, b| {
                b.similarity
                    .partial_cmp(&a.similarity)
                    .unwrap_or(Ordering::Equal)
                    .then(a.cluster.cmp(&b.cluster))
            });
            scored.truncate(top_k);
            scored
        })
        .collect();
    ClusterNeighborhood { top_k, neighbors }
}

pub fn top_k_similar_clusters(clustering: &Clustering, top_k: usize) -> ClusterNeighborhood {
    top_k_similar_centroids(clustering.centroids(), top_k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding_io::EmbeddingKind;
    use proptest::prelude::*;

    fn pts(raw: &[&[f64]]) -> Vec<Vec<f64>> {
        raw.iter().map(|p| p.to_vec()).collect()
    }

    fn trace_non_increasing(trace: &[f64]) -> bool {
        trace
            .windows(2)
            .all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0))
    }

    #[test]
    fn singleton_clusters_when_k_equals_n() {
        let points = pts(&[&[0.0, 0.0], &[1.0, 5.0], &[3.0, -2.0], &[7.0, 7.0]]);
        let fit = kmeans_points(&points, 4, 1, &KMeansConfig::default()).unwrap();
        assert_eq!(fit.inertia, 0.0);
        let mut a = fit.assignment.clone();
        a.sort();
        a.dedup();
        assert_eq!(a.len(), 4);
    }

    #[test]
    fn two_obvious_clusters() {
        let points = pts(&[&[0.0, 0.0], &[0.0, 1.0], &[10.0, 0.0], &[10.0, 1.0]]);
        let fit = kmeans_points(&points, 2, 5, &KMeansConfig::default()).unwrap();
        assert_eq!(fit.assignment, vec![0, 0, 1, 1]);
        assert_eq!(fit.centroids, vec![vec![0.0, 0.5], vec![10.0, 0.5]]);
        assert!((fit.inertia - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_points_repair_empty_cluster() {
        let points = vec![vec![2.0, -1.0]; 5];
        let fit = kmeans_points(&points, 2, 0, &KMeansConfig::default()).unwrap();
        assert_eq!(fit.inertia, 0.0);
        assert!(fit.assignment.contains(&0) && fit.assignment.contains(&1));
        assert_eq!(fit.centroids, vec![vec![2.0, -1.0], vec![2.0, -1.0]]);
    }

    #[test]
    fn infeasible_k() {
        let points = pts(&[&[0.0], &[1.0]]);
        assert!(matches!(
            kmeans_points(&points, 3, 0, &KMeansConfig::default()),
            Err(Error::InfeasibleK { k: 3, classes: 2 })
        ));
        assert!(kmeans_points(&points, 0, 0, &KMeansConfig::default()).is_err());
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[3.0, 4.0], &[3.0, 4.0]) - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert!(
            (cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]) - std::f64::consts::FRAC_1_SQRT_2).abs()
                < 1e-8
        );
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
    }

    #[test]
    fn neighborhood_examples() {
        let two = top_k_similar_centroids(&pts(&[&[1.0, 0.0], &[0.0, 1.0]]), 3);
        assert_eq!(two.of(0).len(), 1);
        assert_eq!(two.of(0)[0].cluster, 1);
        assert_eq!(two.of(1)[0].cluster, 0);

        let three = top_k_similar_centroids(&pts(&[&[1.0, 0.0], &[0.9, 0.1], &[-1.0, 0.0]]), 1);
        assert_eq!(three.of(0)[0].cluster, 1);
        assert_eq!(three.of(2)[0].cluster, 1);
        assert!(
            (three.of(2)[0].similarity - cosine_similarity(&[-1.0, 0.0], &[0.9, 0.1])).abs()
                < 1e-15
        );

        let same = top_k_similar_centroids(
            &pts(&[&[1.0, 1.0], &[2.0, 2.0], &[3.0, 3.0], &[4.0, 4.0]]),
            2,
        );
        assert_eq!(
            same.of(0).iter().map(|n| n.cluster).collect::<Vec<_>>(),
            vec![1, 2]
        );
        assert_eq!(
            same.of(2).iter().map(|n| n.cluster).collect::<Vec<_>>(),
            vec![0, 1]
        );
        assert_eq!(
            same.of(3).iter().map(|n| n.cluster).collect::<Vec<_>>(),
            vec![0, 1]
        );
    }

    #[test]
    fn clustering_accessors() {
        let set = EmbeddingSet::new(
            EmbeddingKind::PerClass,
            1,
            vec![
                ("a".into(), vec![0.0]),
                ("b".into(), vec![10.0]),
                ("c".into(), vec![0.5]),
            ],
        )
        .unwrap();
        let c = kmeans(&set, 2, 0, &KMeansConfig::default()).unwrap();
        assert_eq!(c.cluster_of("a"), c.cluster_of("c"));
        assert_ne!(c.cluster_of("a"), c.cluster_of("b"));
        assert_eq!(c.sizes().iter().sum::<usize>(), 3);
        assert_eq!(c.members()[0], vec!["a".to_string(), "c".to_string()]);
    }

    fn brute_force_neighbors(centroids: &[Vec<f64>], top_k: usize) -> Vec<Vec<usize>> {
        (0..centroids.len())
            .map(|k| {
                let mut all: Vec<(usize, f64)> = (0..centroids.len())
                    .filter(|&j| j != k)
                    .map(|j| {
                        let dot: f64 = centroids[k]
                            .iter()
                            .zip(&centroids[j])
                            .map(|(a, b)| a * b)
                            .sum();
                        let na: f64 = centroids[k].iter().map(|a| a * a).sum::<f64>().sqrt();
                        let nb: f64 = centroids[j].iter().map(|a| a * a).sum::<f64>().sqrt();
                        (
                            j,
                            if na == 0.0 || nb == 0.0 {
                                0.0
                            } else {
                                dot / (na * nb)
                            },
                        )
                    })
                    .collect();
                // Selection by repeated max scan.
                let mut out = Vec::new();
                while out.len() < top_k && !all.is_empty() {
                    let mut best = 0;
                    for i in 1..all.len() {
                        if all[i].1 > all[best].1 {
                            best = i;
                        }
                    }
                    out.push(all.remove(best).0);
                }
                out
            })
            .collect()
    }

    proptest! {
        #[test]
        fn lloyd_invariants(
            raw in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 3), 2..40),
            k in 1usize..6,
            seed in any::<u64>(),
        ) {
            prop_assume!(k <= raw.len());
            let fit = kmeans_points(&raw, k, seed, &KMeansConfig::default()).unwrap();
            prop_assert!(trace_non_increasing(&fit.inertia_trace));
            let again = kmeans_points(&raw, k, seed, &KMeansConfig::default()).unwrap();
            prop_assert_eq!(&again.assignment, &fit.assignment);
            let mut sizes = vec![0usize; k];
            for &a in &fit.assignment { sizes[a] += 1; }
            prop_assert!(sizes.iter().all(|&s| s > 0));
            for c in 0..k {
                for d in 0..3 {
                    let members: Vec<f64> = raw.iter().zip(&fit.assignment).filter(|(_, &a)| a == c).map(|(p, _)| p[d]).collect();
                    let mean = members.iter().sum::<f64>() / members.len() as f64;
                    prop_assert!((fit.centroids[c][d] - mean).abs() <= 1e-6 * mean.abs().max(1.0));
                }
            }
        }

        #[test]
        fn neighborhood_matches_brute_force(
            raw in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 2), 2..10),
            top_k in 1usize..5,
        ) {
            let nb = top_k_similar_centroids(&raw, top_k);
            let oracle = brute_force_neighbors(&raw, top_k);
            for k in 0..raw.len() {
                let list = nb.of(k);
                prop_assert_eq!(list.len(), top_k.min(raw.len() - 1));
                prop_assert!(list.iter().all(|n| n.cluster != k));
                prop_assert!(list.windows(2).all(|w| w[0].similarity >= w[1].similarity));
                let got: Vec<usize> = list.iter().map(|n| n.cluster).collect();
                prop_assert_eq!(&got, &oracle[k]);
            }
        }
    }
}
