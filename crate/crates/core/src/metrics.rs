//! Heterogeneity metrics over partition plans and class embeddings.
//!
//! Pairwise set computations run over fixed-width bitsets of class ids and
//! accumulate into integer histograms, so the results are exact and
//! independent of the thread count.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding_io::EmbeddingSet;
use crate::error::{Error, Result};
use crate::partitioner::PartitionPlan;
use crate::rng;

/// Pair sample size for cross-plan Jaccard when none is given.
pub const DEFAULT_JACCARD_SAMPLES: usize = 100_000;
pub const DEFAULT_JACCARD_SEED: u64 = 0;

fn lookup<'a>(embeddings: &'a EmbeddingSet, class: &str) -> Result<&'a [f32]> {
    embeddings
        .get(class)
        .ok_or_else(|| Error::MissingEmbedding(class.to_string()))
}

fn rows<'a, S: AsRef<str>>(classes: &[S], embeddings: &'a EmbeddingSet) -> Result<Vec<&'a [f32]>> {
    if classes.len() < 2 {
        return Err(Error::UndefinedMetric(format!(
            "pairwise subset metrics need at least 2 classes, got {}",
            classes.len()
        )));
    }
    classes
        .iter()
        .map(|c| lookup(embeddings, c.as_ref()))
        .collect()
}

fn cosine_f32(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb).sqrt()).clamp(-1.0, 1.0)
    }
}

fn squared_distance_f32(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

fn mean_over_pairs(vectors: &[&[f32]], f: impl Fn(&[f32], &[f32]) -> f64) -> f64 {
    let k = vectors.len();
    let mut sum = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            sum += f(vectors[i], vectors[j]);
        }
    }
    2.0 * sum / (k as f64 * (k as f64 - 1.0))
}

/// Mean pairwise cosine distance `1 - cos` between the subset's class
/// embeddings. In `[0, 2]`.
pub fn subset_diversity<S: AsRef<str>>(classes: &[S], embeddings: &EmbeddingSet) -> Result<f64> {
    let v = rows(classes, embeddings)?;
    Ok(mean_over_pairs(&v, |a, b| 1.0 - cosine_f32(a, b)))
}

/// Mean pairwise squared Euclidean distance between the subset's class
/// embeddings.
pub fn intra_subset_variance<S: AsRef<str>>(
    classes: &[S],
    embeddings: &EmbeddingSet,
) -> Result<f64> {
    let v = rows(classes, embeddings)?;
    Ok(mean_over_pairs(&v, squared_distance_f32))
}

/// `|a ∩ b| / |a ∪ b|`, with two empty sets counting as identical (1).
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Trace of the population covariance of the vectors, computed per dimension.
pub fn coverage_trace_of<'a, I>(vectors: I) -> f64
where
    I: IntoIterator<Item = &'a [f32]>,
    I::IntoIter: Clone,
{
    let iter = vectors.into_iter();
    let mut mean: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for v in iter.clone() {
        if mean.is_empty() {
            mean = vec![0.0; v.len()];
        }
        for (m, &x) in mean.iter_mut().zip(v) {
            *m += x as f64;
        }
        n += 1;
    }
    if n == 0 {
        return 0.0;
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut total = 0.0;
    for v in iter {
        for (m, &x) in mean.iter().zip(v) {
            let d = x as f64 - m;
            total += d * d;
        }
    }
    total / n as f64
}

pub fn coverage_trace(vectors: &EmbeddingSet) -> f64 {
    coverage_trace_of((0..vectors.len()).map(|i| vectors.vector(i)))
}

/// Coverage of the multiset of class embeddings selected across all subsets
/// (a class drawn by `m` subsets contributes `m` copies).
pub fn pooled_coverage_trace(plan: &PartitionPlan, embeddings: &EmbeddingSet) -> Result<f64> {
    let mut pooled = Vec::new();
    for s in &plan.subsets {
        for c in &s.classes {
            pooled.push(lookup(embeddings, c)?);
        }
    }
    Ok(coverage_trace_of(pooled.iter().copied()))
}

/// Dense ids for class names and one fixed-width bitset per subset.
struct SubsetBits {
    words: usize,
    bits: Vec<u64>,
    sizes: Vec<u32>,
}

struct ClassIndex {
    ids: HashMap<String, usize>,
}

impl ClassIndex {
    fn new<'a>(names: impl IntoIterator<Item = &'a String>) -> Self {
        let sorted: BTreeSet<&String> = names.into_iter().collect();
        Self {
            ids: sorted
                .into_iter()
                .enumerate()
                .map(|(i, n)| (n.clone(), i))
                .collect(),
        }
    }

    fn for_plans(plans: &[&PartitionPlan]) -> Self {
        Self::new(plans.iter().flat_map(|p| {
            p.provenance
                .class_universe
                .iter()
                .chain(p.subsets.iter().flat_map(|s| s.classes.iter()))
        }))
    }

    fn bits(&self, plan: &PartitionPlan) -> SubsetBits {
        let words = self.ids.len().div_ceil(64).max(1);
        let mut bits = vec![0u64; words * plan.subsets.len()];
        let mut sizes = Vec::with_capacity(plan.subsets.len());
        for (i, s) in plan.subsets.iter().enumerate() {
            let row = &mut bits[i * words..(i + 1) * words];
            for c in &s.classes {
                let id = self.ids[c];
                row[id / 64] |= 1 << (id % 64);
            }
            sizes.push(row.iter().map(|w| w.count_ones()).sum());
        }
        SubsetBits { words, bits, sizes }
    }
}

impl SubsetBits {
    fn len(&self) -> usize {
        self.sizes.len()
    }

    fn row(&self, i: usize) -> &[u64] {
        &self.bits[i * self.words..(i + 1) * self.words]
    }

    fn max_size(&self) -> usize {
        self.sizes.iter().copied().max().unwrap_or(0) as usize
    }
}

fn intersection(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x & y).count_ones()).sum()
}

/// Counts of `(|A∩B|, |A∪B|)` over a collection of subset pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapHistogram {
    max_size: usize,
    counts: Vec<u64>,
}

impl OverlapHistogram {
    fn new(max_size: usize) -> Self {
        Self {
            max_size,
            counts: vec![0; (max_size + 1) * (2 * max_size + 1)],
        }
    }

    fn add(&mut self, inter: usize, union: usize) {
        self.counts[inter * (2 * self.max_size + 1) + union] += 1;
    }

    fn merge(mut self, other: Self) -> Self {
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
        self
    }

    fn cells(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        let width = 2 * self.max_size + 1;
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(move |(i, &c)| (i / width, i % width, c))
    }

    pub fn pairs(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Sum of `|A∩B|` over all pairs.
    pub fn overlap_sum(&self) -> u64 {
        self.cells().map(|(i, _, c)| i as u64 * c).sum()
    }

    /// Pair counts per intersection size.
    pub fn overlap_counts(&self) -> Vec<u64> {
        let mut out = vec![0u64; self.max_size + 1];
        for (i, _, c) in self.cells() {
            out[i] += c;
        }
        out
    }

    pub fn jaccard_mean(&self) -> f64 {
        let pairs = self.pairs();
        if pairs == 0 {
            return f64::NAN;
        }
        let sum: f64 = self
            .cells()
            .map(|(i, u, c)| c as f64 * if u == 0 { 1.0 } else { i as f64 / u as f64 })
            .sum();
        sum / pairs as f64
    }

    /// Distinct Jaccard values (ascending) with their pair counts.
    pub fn jaccard_distribution(&self) -> Vec<JaccardBin> {
        let mut bins: BTreeMap<(usize, usize), u64> = BTreeMap::new();
        for (i, u, c) in self.cells() {
            let (num, den) = if u == 0 { (1, 1) } else { reduce(i, u) };
            *bins.entry((num, den)).or_default() += c;
        }
        let mut out: Vec<JaccardBin> = bins
            .into_iter()
            .map(|((num, den), pairs)| JaccardBin {
                value: num as f64 / den as f64,
                pairs,
            })
            .collect();
        out.sort_by(|a, b| a.value.total_cmp(&b.value));
        out
    }
}

fn reduce(a: usize, b: usize) -> (usize, usize) {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let g = gcd(a, b).max(1);
    (a / g, b / g)
}

/// All unordered pairs `i < j` within one plan.
fn all_pairs_histogram(bits: &SubsetBits) -> OverlapHistogram {
    let n = bits.len();
    let max = bits.max_size();
    (0..n)
        .into_par_iter()
        .fold(
            || OverlapHistogram::new(max),
            |mut h, i| {
                let a = bits.row(i);
                for j in (i + 1)..n {
                    let inter = intersection(a, bits.row(j)) as usize;
                    h.add(inter, (bits.sizes[i] + bits.sizes[j]) as usize - inter);
                }
                h
            },
        )
        .reduce(|| OverlapHistogram::new(max), OverlapHistogram::merge)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JaccardBin {
    pub value: f64,
    pub pairs: u64,
}

/// Five-number summary of an integer distribution, type-7 (linear) quantiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Quantiles of the distribution where value `v` occurs `counts[v]` times.
pub fn quartiles_from_counts(counts: &[u64]) -> Option<Quartiles> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return None;
    }
    let value_at = |rank: u64| -> f64 {
        let mut acc = 0u64;
        for (v, &c) in counts.iter().enumerate() {
            acc += c;
            if acc > rank {
                return v as f64;
            }
        }
        unreachable!("rank below total")
    };
    let q = |p: f64| -> f64 {
        let pos = p * (total - 1) as f64;
        let lo = pos.floor();
        let lo_v = value_at(lo as u64);
        let hi_v = value_at(pos.ceil() as u64);
        lo_v + (pos - lo) * (hi_v - lo_v)
    };
    Some(Quartiles {
        min: q(0.0),
        q1: q(0.25),
        median: q(0.5),
        q3: q(0.75),
        max: q(1.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedundancyReport {
    pub mean: f64,
    /// Exact `Σ_{i<j} |S_i ∩ S_j|`.
    pub overlap_sum: u64,
    pub pairs: u64,
    /// `distribution[v]` = number of subset pairs sharing exactly `v` classes.
    pub distribution: Vec<u64>,
    pub quartiles: Quartiles,
}

impl RedundancyReport {
    fn from_histogram(h: &OverlapHistogram) -> Self {
        let distribution = h.overlap_counts();
        let pairs = h.pairs();
        let overlap_sum = h.overlap_sum();
        Self {
            mean: overlap_sum as f64 / pairs as f64,
            overlap_sum,
            pairs,
            quartiles: quartiles_from_counts(&distribution).expect("at least one pair"),
            distribution,
        }
    }
}

fn require_pairs(plan: &PartitionPlan) -> Result<()> {
    if plan.subsets.len() < 2 {
        return Err(Error::UndefinedMetric(format!(
            "pairwise plan metrics need at least 2 subsets, got {}",
            plan.subsets.len()
        )));
    }
    Ok(())
}

/// Mean and distribution of `|S_i ∩ S_j|` over all subset pairs.
pub fn redundancy(plan: &PartitionPlan) -> Result<RedundancyReport> {
    require_pairs(plan)?;
    let bits = ClassIndex::for_plans(&[plan]).bits(plan);
    Ok(RedundancyReport::from_histogram(&all_pairs_histogram(
        &bits,
    )))
}

/// `Σ_c C(h_c, 2)`: the pairwise overlap sum recovered from class counts.
pub fn overlap_sum_from_histogram(histogram: &BTreeMap<String, u64>) -> u64 {
    histogram
        .values()
        .map(|&h| h * h.saturating_sub(1) / 2)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassHistogram {
    /// Number of subsets containing each class of the universe.
    pub counts: BTreeMap<String, u64>,
    pub entropy_nats: f64,
    pub num_classes: usize,
}

/// Subset-level class occurrence counts and their entropy (natural log).
///
/// The histogram covers the plan's class universe, so never-drawn classes
/// appear with count 0.
pub fn class_histogram_and_entropy(plan: &PartitionPlan) -> ClassHistogram {
    let mut counts: BTreeMap<String, u64> = plan
        .provenance
        .class_universe
        .iter()
        .map(|c| (c.clone(), 0))
        .collect();
    for s in &plan.subsets {
        for c in &s.classes {
            *counts.entry(c.clone()).or_default() += 1;
        }
    }
    let total: u64 = counts.values().sum();
    let entropy_nats = if total == 0 {
        0.0
    } else {
        counts
            .values()
            .filter(|&&h| h > 0)
            .map(|&h| {
                let p = h as f64 / total as f64;
                -p * p.ln()
            })
            .sum::<f64>()
            .max(0.0)
    };
    ClassHistogram {
        num_classes: counts.len(),
        counts,
        entropy_nats,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Pairing {
    IndexMatched,
    AllPairsSampled { sample_size: usize, seed: u64 },
}

impl Default for Pairing {
    fn default() -> Self {
        Pairing::AllPairsSampled {
            sample_size: DEFAULT_JACCARD_SAMPLES,
            seed: DEFAULT_JACCARD_SEED,
        }
    }
}

/// Mean Jaccard similarity between subsets of two plans.
///
/// `IndexMatched` pairs subset `i` of `a` with subset `i` of `b`;
/// `AllPairsSampled` draws `(i, j)` uniformly with replacement from
/// `a × b`.
pub fn cross_plan_jaccard(a: &PartitionPlan, b: &PartitionPlan, pairing: Pairing) -> Result<f64> {
    if a.subsets.is_empty() || b.subsets.is_empty() {
        return Err(Error::UndefinedMetric(
            "cross-plan Jaccard needs nonempty plans".into(),
        ));
    }
    let index = ClassIndex::for_plans(&[a, b]);
    let (ba, bb) = (index.bits(a), index.bits(b));
    let max = ba.max_size().max(bb.max_size());
    let mut h = OverlapHistogram::new(max);
    let mut add = |i: usize, j: usize| {
        let inter = intersection(ba.row(i), bb.row(j)) as usize;
        h.add(inter, (ba.sizes[i] + bb.sizes[j]) as usize - inter);
    };
    match pairing {
        Pairing::IndexMatched => {
            if a.subsets.len() != b.subsets.len() {
                return Err(Error::UndefinedMetric(format!(
                    "index-matched pairing needs equal subset counts, got {} and {}",
                    a.subsets.len(),
                    b.subsets.len()
                )));
            }
            (0..ba.len()).for_each(|i| add(i, i));
        }
        Pairing::AllPairsSampled { sample_size, seed } => {
            if sample_size == 0 {
                return Err(Error::UndefinedMetric(
                    "sample size must be positive".into(),
                ));
            }
            let mut rng = rng::stream(seed, 0);
            for _ in 0..sample_size {
                let i = rng::uniform_index(&mut rng, ba.len());
                let j = rng::uniform_index(&mut rng, bb.len());
                add(i, j);
            }
        }
    }
    Ok(h.jaccard_mean())
}

/// How pairs of distinct subsets of one plan are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WithinPairing {
    AllPairs,
    Sampled { sample_size: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JaccardSummary {
    pub pairing: WithinPairing,
    pub mean: f64,
    pub pairs: u64,
    pub distribution: Vec<JaccardBin>,
}

/// Jaccard similarity between distinct subsets of one plan.
pub fn plan_jaccard(plan: &PartitionPlan, pairing: WithinPairing) -> Result<JaccardSummary> {
    require_pairs(plan)?;
    let bits = ClassIndex::for_plans(&[plan]).bits(plan);
    let h = match pairing {
        WithinPairing::AllPairs => all_pairs_histogram(&bits),
        WithinPairing::Sampled { sample_size, seed } => {
            if sample_size == 0 {
                return Err(Error::UndefinedMetric(
                    "sample size must be positive".into(),
                ));
            }
            let n = bits.len();
            let mut h = OverlapHistogram::new(bits.max_size());
            let mut rng = rng::stream(seed, 0);
            for _ in 0..sample_size {
                let i = rng::uniform_index(&mut rng, n);
                let mut j = rng::uniform_index(&mut rng, n - 1);
                if j >= i {
                    j += 1;
                }
                let inter = intersection(bits.row(i), bits.row(j)) as usize;
                h.add(inter, (bits.sizes[i] + bits.sizes[j]) as usize - inter);
            }
            h
        }
    };
    Ok(JaccardSummary {
        pairing,
        mean: h.jaccard_mean(),
        pairs: h.pairs(),
        distribution: h.jaccard_distribution(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetMetrics {
    pub subset_id: usize,
    pub diversity: Option<f64>,
    pub intra_variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossPlanJaccard {
    pub pairing: Pairing,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub num_subsets: usize,
    pub num_classes: usize,
    /// Empty when no embeddings were supplied.
    pub per_subset: Vec<SubsetMetrics>,
    pub histogram: BTreeMap<String, u64>,
    pub entropy_nats: f64,
    /// `ln C`, the upper bound of `entropy_nats`.
    pub max_entropy_nats: f64,
    /// `None` for plans with fewer than two subsets.
    pub redundancy: Option<RedundancyReport>,
    pub coverage_trace: Option<f64>,
    pub pairwise_jaccard: Option<JaccardSummary>,
    pub cross_plan_jaccard: Option<CrossPlanJaccard>,
}

impl MetricsReport {
    pub fn mean_diversity(&self) -> Option<f64> {
        mean(self.per_subset.iter().filter_map(|s| s.diversity))
    }

    pub fn mean_intra_variance(&self) -> Option<f64> {
        mean(self.per_subset.iter().filter_map(|s| s.intra_variance))
    }

    /// Checks the range invariant of every metric present in the report.
    pub fn check_bounds(&self) -> std::result::Result<(), String> {
        let eps = 1e-12;
        for s in &self.per_subset {
            if let Some(d) = s.diversity {
                if !(-eps..=2.0 + eps).contains(&d) {
                    return Err(format!(
                        "subset {}: diversity {d} outside [0, 2]",
                        s.subset_id
                    ));
                }
            }
            if let Some(v) = s.intra_variance {
                if v.is_nan() || v < 0.0 {
                    return Err(format!(
                        "subset {}: intra variance {v} negative",
                        s.subset_id
                    ));
                }
            }
        }
        if !(self.entropy_nats >= 0.0 && self.entropy_nats <= self.max_entropy_nats + 1e-12) {
            return Err(format!(
                "entropy {} outside [0, ln C = {}]",
                self.entropy_nats, self.max_entropy_nats
            ));
        }
        if let Some(c) = self.coverage_trace {
            if c.is_nan() || c < 0.0 {
                return Err(format!("coverage trace {c} negative"));
            }
        }
        if let Some(r) = &self.redundancy {
            let max_size = r.distribution.len().saturating_sub(1) as f64;
            if r.quartiles.min < 0.0
                || r.quartiles.max > max_size
                || r.mean < 0.0
                || r.mean > max_size
            {
                return Err("redundancy outside [0, S]".into());
            }
        }
        let jaccards = self
            .pairwise_jaccard
            .iter()
            .map(|j| j.mean)
            .chain(self.cross_plan_jaccard.iter().map(|j| j.mean));
        for j in jaccards {
            if !(0.0..=1.0).contains(&j) {
                return Err(format!("jaccard {j} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    pub within_pairing: WithinPairing,
    pub cross_pairing: Pairing,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            within_pairing: WithinPairing::AllPairs,
            cross_pairing: Pairing::default(),
        }
    }
}

/// Every metric for one plan, plus cross-plan Jaccard when `compare` is given.
/// Embedding-based metrics are left empty when `embeddings` is `None`.
pub fn compute_report(
    plan: &PartitionPlan,
    embeddings: Option<&EmbeddingSet>,
    compare: Option<&PartitionPlan>,
    options: &ReportOptions,
) -> Result<MetricsReport> {
    let histogram = class_histogram_and_entropy(plan);
    let per_subset = match embeddings {
        Some(e) => plan
            .subsets
            .par_iter()
            .map(|s| {
                let pairwise = s.classes.len() >= 2;
                Ok(SubsetMetrics {
                    subset_id: s.id,
                    diversity: if pairwise {
                        Some(subset_diversity(&s.classes, e)?)
                    } else {
                        None
                    },
                    intra_variance: if pairwise {
                        Some(intra_subset_variance(&s.classes, e)?)
                    } else {
                        None
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    let coverage = embeddings
        .map(|e| pooled_coverage_trace(plan, e))
        .transpose()?;
    let (redundancy, pairwise_jaccard) = if plan.subsets.len() >= 2 {
        let bits = ClassIndex::for_plans(&[plan]).bits(plan);
        let all = all_pairs_histogram(&bits);
        let red = RedundancyReport::from_histogram(&all);
        let jac = match options.within_pairing {
            WithinPairing::AllPairs => JaccardSummary {
                pairing: WithinPairing::AllPairs,
                mean: all.jaccard_mean(),
                pairs: all.pairs(),
                distribution: all.jaccard_distribution(),
            },
            sampled => plan_jaccard(plan, sampled)?,
        };
        (Some(red), Some(jac))
    } else {
        (None, None)
    };
    let cross = compare
        .map(|other| {
            cross_plan_jaccard(plan, other, options.cross_pairing).map(|mean| CrossPlanJaccard {
                pairing: options.cross_pairing,
                mean,
            })
        })
        .transpose()?;
    Ok(MetricsReport {
        num_subsets: plan.subsets.len(),
        num_classes: histogram.num_classes,
        max_entropy_nats: (histogram.num_classes.max(1) as f64).ln(),
        per_subset,
        histogram: histogram.counts,
        entropy_nats: histogram.entropy_nats,
        redundancy,
        coverage_trace: coverage,
        pairwise_jaccard,
        cross_plan_jaccard: cross,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// Named scalars of a report; `None` marks metrics that do not apply.
pub fn summary_rows(report: &MetricsReport) -> Vec<(&'static str, Option<f64>)> {
    let red = report.redundancy.as_ref();
    vec![
        ("num_subsets", Some(report.num_subsets as f64)),
        ("num_classes", Some(report.num_classes as f64)),
        ("entropy_nats", Some(report.entropy_nats)),
        ("max_entropy_nats", Some(report.max_entropy_nats)),
        ("redundancy_mean", red.map(|r| r.mean)),
        ("redundancy_min", red.map(|r| r.quartiles.min)),
        ("redundancy_q1", red.map(|r| r.quartiles.q1)),
        ("redundancy_median", red.map(|r| r.quartiles.median)),
        ("redundancy_q3", red.map(|r| r.quartiles.q3)),
        ("redundancy_max", red.map(|r| r.quartiles.max)),
        (
            "jaccard_mean",
            report.pairwise_jaccard.as_ref().map(|j| j.mean),
        ),
        ("diversity_mean", report.mean_diversity()),
        ("intra_variance_mean", report.mean_intra_variance()),
        ("coverage_trace", report.coverage_trace),
        (
            "cross_plan_jaccard_mean",
            report.cross_plan_jaccard.as_ref().map(|j| j.mean),
        ),
    ]
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn finish(path: &Path, res: io::Result<()>) -> Result<()> {
    res.map_err(|e| Error::io(path, e))
}

pub const REPORT_FILE: &str = "report.json";
pub const PER_SUBSET_FILE: &str = "per_subset.csv";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const REDUNDANCY_PAIRS_FILE: &str = "redundancy_pairs.csv";

/// Writes `report.json`, `per_subset.csv`, `histogram.csv` and `summary.csv`
/// into `dir`.
pub fn write_report(report: &MetricsReport, dir: &Path) -> Result<()> {
    let path = dir.join(REPORT_FILE);
    let mut json = serde_json::to_string_pretty(report).expect("report is serializable");
    json.push('\n');
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;

    let path = dir.join(PER_SUBSET_FILE);
    let mut w = create(&path)?;
    let res = (|| {
        writeln!(w, "subset_id,diversity,intra_variance")?;
        for s in &report.per_subset {
            writeln!(
                w,
                "{},{},{}",
                s.subset_id,
                fmt_opt(s.diversity),
                fmt_opt(s.intra_variance)
            )?;
        }
        w.flush()
    })();
    finish(&path, res)?;

    let path = dir.join(HISTOGRAM_FILE);
    let mut w = create(&path)?;
    let res = (|| {
        writeln!(w, "class,count")?;
        for (c, n) in &report.histogram {
            writeln!(w, "{c},{n}")?;
        }
        w.flush()
    })();
    finish(&path, res)?;

    let path = dir.join(SUMMARY_FILE);
    let mut w = create(&path)?;
    let res = (|| {
        writeln!(w, "metric,value")?;
        for (k, v) in summary_rows(report) {
            writeln!(w, "{k},{}", fmt_opt(v))?;
        }
        w.flush()
    })();
    finish(&path, res)
}

/// Streams `i,j,overlap` for every subset pair `i < j`.
pub fn write_redundancy_pairs<W: Write>(plan: &PartitionPlan, mut sink: W) -> io::Result<()> {
    let bits = ClassIndex::for_plans(&[plan]).bits(plan);
    writeln!(sink, "i,j,overlap")?;
    for i in 0..bits.len() {
        for j in (i + 1)..bits.len() {
            writeln!(sink, "{i},{j},{}", intersection(bits.row(i), bits.row(j)))?;
        }
    }
    sink.flush()
}
