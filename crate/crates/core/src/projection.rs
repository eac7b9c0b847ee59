//! Two-dimensional projections of class embeddings: PCA and exact t-SNE.

use std::io::{self, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding_io::EmbeddingSet;
use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_PCA_DIMS: usize = 50;
pub const DEFAULT_PERPLEXITY: f64 = 30.0;
pub const DEFAULT_ITERATIONS: usize = 1000;
pub const DEFAULT_LEARNING_RATE: f64 = 200.0;
pub const DEFAULT_EARLY_EXAGGERATION: f64 = 12.0;
/// Iteration at which exaggeration ends and momentum switches.
pub const EXAGGERATION_ITERS: usize = 250;

const INITIAL_MOMENTUM: f64 = 0.5;
const FINAL_MOMENTUM: f64 = 0.8;
const INIT_STDDEV: f64 = 1e-4;
const MIN_GAIN: f64 = 0.01;
const SEARCH_STEPS: usize = 200;
const ENTROPY_TOL: f64 = 1e-12;
/// Post-fit tolerance on each row's perplexity.
pub const PERPLEXITY_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaFit {
    /// `n × out_dims` coordinates.
    pub projected: Vec<Vec<f64>>,
    /// Unit principal axes, one row per output dimension.
    pub components: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Eigenvalues of the population covariance for the kept axes.
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

impl PcaFit {
    /// Maps the projected coordinates back to the input space.
    pub fn reconstruct(&self) -> Vec<Vec<f64>> {
        self.projected
            .iter()
            .map(|z| {
                let mut x = self.mean.clone();
                for (c, &zk) in self.components.iter().zip(z) {
                    x.iter_mut().zip(c).for_each(|(xi, ci)| *xi += zk * ci);
                }
                x
            })
            .collect()
    }
}

fn orient(axis: &mut [f64]) {
    let mut best = 0;
    for (i, v) in axis.iter().enumerate() {
        if v.abs() > axis[best].abs() {
            best = i;
        }
    }
    if axis[best] < 0.0 {
        axis.iter_mut().for_each(|v| *v = -*v);
    }
}

/// Eigenpairs sorted by descending eigenvalue (ties keep solver order).
fn sorted_eigen(m: DMatrix<f64>) -> Vec<(f64, Vec<f64>)> {
    let eig = SymmetricEigen::new(m);
    let mut pairs: Vec<(f64, Vec<f64>)> = eig
        .eigenvalues
        .iter()
        .zip(eig.eigenvectors.column_iter())
        .map(|(&l, v)| (l.max(0.0), v.iter().copied().collect()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

/// Principal axes of centered rows. Uses the `d × d` covariance when
/// `d ≤ n` and the `n × n` Gram matrix otherwise.
fn principal_axes(centered: &DMatrix<f64>, out_dims: usize) -> Vec<(f64, Vec<f64>)> {
    let (n, d) = centered.shape();
    let scale = 1.0 / n as f64;
    if d <= n {
        let cov = centered.transpose() * centered * scale;
        sorted_eigen(cov).into_iter().take(out_dims).collect()
    } else {
        let gram = centered * centered.transpose() * scale;
        sorted_eigen(gram)
            .into_iter()
            .take(out_dims)
            .map(|(l, u)| {
                // v = Xᵀu / sqrt(nλ); a null direction projects everything to 0.
                let u = nalgebra::DVector::from_vec(u);
                let v = centered.transpose() * u;
                let norm = v.norm();
                let axis = if l > 0.0 && norm > 0.0 {
                    (v / norm).iter().copied().collect()
                } else {
                    vec![0.0; d]
                };
                (l, axis)
            })
            .collect()
    }
}

pub fn pca_rows(rows: &[Vec<f64>], out_dims: usize) -> Result<PcaFit> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "PCA needs at least 2 points, got {n}"
        )));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidEmbeddings("rows differ in dimension".into()));
    }
    if out_dims == 0 || out_dims > n.min(d) {
        return Err(Error::InvalidParams(format!(
            "PCA output dimension {out_dims} must be in 1..={} (min of {n} points, dimension {d})",
            n.min(d)
        )));
    }
    let mut mean = vec![0.0; d];
    for r in rows {
        mean.iter_mut().zip(r).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let total: f64 = centered.iter().map(|v| v * v).sum::<f64>() / n as f64;

    let mut components = Vec::with_capacity(out_dims);
    let mut explained_variance = Vec::with_capacity(out_dims);
    for (l, mut axis) in principal_axes(&centered, out_dims) {
        orient(&mut axis);
        components.push(axis);
        explained_variance.push(l);
    }
    let explained_variance_ratio = explained_variance
        .iter()
        .map(|&l| {
            if total > 0.0 {
                (l / total).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();
    let projected = (0..n)
        .map(|i| {
            components
                .iter()
                .map(|c| {
                    c.iter()
                        .enumerate()
                        .map(|(j, cj)| centered[(i, j)] * cj)
                        .sum()
                })
                .collect()
        })
        .collect();
    Ok(PcaFit {
        projected,
        components,
        mean,
        explained_variance,
        explained_variance_ratio,
    })
}

/// Mean-centered projection onto the top `out_dims` principal axes.
pub fn pca(vectors: &EmbeddingSet, out_dims: usize) -> Result<PcaFit> {
    pca_rows(&vectors.to_f64_rows(), out_dims)
}

fn squared_distances(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len();
    let mut d = vec![0.0; n * n];
    d.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, out) in row.iter_mut().enumerate() {
            *out = rows[i]
                .iter()
                .zip(&rows[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
        }
    });
    d
}

/// Largest perplexity strictly allowed for `n` points.
pub fn perplexity_bound(n: usize) -> f64 {
    (n as f64 - 1.0) / 3.0
}

pub fn check_perplexity(perplexity: f64, n: usize) -> Result<()> {
    let bound = perplexity_bound(n);
    if n < 4 || !(perplexity > 1.0 && perplexity < bound) {
        return Err(Error::InfeasiblePerplexity {
            perplexity,
            n,
            bound,
        });
    }
    Ok(())
}

/// Row `i` conditional distribution at precision `beta`, with its entropy
/// in nats. Distances are shifted by the row minimum for stability.
fn conditional_row(dist: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let min = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, (o, &dj)) in out.iter_mut().zip(dist).enumerate() {
        *o = if j == i {
            0.0
        } else {
            (-beta * (dj - min)).exp()
        };
        sum += *o;
    }
    let mut weighted = 0.0;
    for (j, o) in out.iter_mut().enumerate() {
        if j != i {
            weighted += *o * (dist[j] - min);
        }
        *o /= sum;
    }
    // H = ln Σ + β E[d - min]
    sum.ln() + beta * weighted / sum
}

#[derive(Debug, Clone, PartialEq)]
pub struct Affinities {
    pub n: usize,
    /// Symmetrized joint probabilities, row-major `n × n`, zero diagonal.
    pub p: Vec<f64>,
    /// Perplexity `exp(H)` of each fitted conditional row.
    pub row_perplexity: Vec<f64>,
    /// Precision `1 / (2σ²)` of each row.
    pub beta: Vec<f64>,
}

impl Affinities {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.n + j]
    }

    pub fn max_perplexity_error(&self, target: f64) -> f64 {
        self.row_perplexity
            .iter()
            .map(|p| (p - target).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-row Gaussian bandwidths by bisection on the precision so that each
/// conditional row has the target perplexity, then `P = (P_cond + P_condᵀ) / 2n`.
///
/// Rows whose entropy does not depend on the bandwidth (all distances
/// equal) run the search to its step cap and stay uniform.
pub fn affinities(rows: &[Vec<f64>], perplexity: f64) -> Result<Affinities> {
    let n = rows.len();
    check_perplexity(perplexity, n)?;
    let dist = squared_distances(rows);
    let target = perplexity.ln();
    let fitted: Vec<(Vec<f64>, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let d = &dist[i * n..(i + 1) * n];
            let mut out = vec![0.0; n];
            let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
            let mut beta = 1.0;
            let mut h = conditional_row(d, i, beta, &mut out);
            for _ in 0..SEARCH_STEPS {
                let diff = h - target;
                if diff.abs() < ENTROPY_TOL {
                    break;
                }
                if diff > 0.0 {
                    lo = beta;
                    beta = if hi.is_finite() {
                        (beta + hi) / 2.0
                    } else {
                        beta * 2.0
                    };
                } else {
                    hi = beta;
                    beta = (beta + lo) / 2.0;
                }
                h = conditional_row(d, i, beta, &mut out);
            }
            (out, h.exp(), beta)
        })
        .collect();
    let mut p = vec![0.0; n * n];
    let scale = 1.0 / (2.0 * n as f64);
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (fitted[i].0[j] + fitted[j].0[i]) * scale;
        }
    }
    Ok(Affinities {
        n,
        p,
        row_perplexity: fitted.iter().map(|f| f.1).collect(),
        beta: fitted.iter().map(|f| f.2).collect(),
    })
}

/// Student-t kernel `(1 + |y_i - y_j|²)⁻¹` with zero diagonal, and its sum.
fn kernel(y: &[[f64; 2]]) -> (Vec<f64>, f64) {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    let row_sums: Vec<f64> = num
        .par_chunks_mut(n)
        .enumerate()
        .map(|(i, row)| {
            let mut s = 0.0;
            for (j, out) in row.iter_mut().enumerate() {
                if j != i {
                    let dx = y[i][0] - y[j][0];
                    let dy = y[i][1] - y[j][1];
                    *out = 1.0 / (1.0 + dx * dx + dy * dy);
                    s += *out;
                }
            }
            s
        })
        .collect();
    (num, row_sums.iter().sum())
}

/// `KL(P ‖ Q)` for the layout `y`.
pub fn kl_divergence(p: &Affinities, y: &[[f64; 2]]) -> f64 {
    let (num, z) = kernel(y);
    p.p.iter()
        .zip(&num)
        .filter(|(&pij, _)| pij > 0.0)
        .map(|(&pij, &nij)| pij * (pij / (nij / z)).ln())
        .sum()
}

/// `∂KL/∂y_i = 4 Σ_j (exaggeration·p_ij − q_ij)(y_i − y_j)(1 + |y_i − y_j|²)⁻¹`.
fn gradient(p: &Affinities, y: &[[f64; 2]], exaggeration: f64) -> Vec<[f64; 2]> {
    let n = y.len();
    let (num, z) = kernel(y);
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut g = [0.0; 2];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let w = num[i * n + j];
                let m = (exaggeration * p.get(i, j) - w / z) * w;
                g[0] += m * (y[i][0] - y[j][0]);
                g[1] += m * (y[i][1] - y[j][1]);
            }
            [4.0 * g[0], 4.0 * g[1]]
        })
        .collect()
}

pub fn kl_gradient(p: &Affinities, y: &[[f64; 2]]) -> Vec<[f64; 2]> {
    gradient(p, y, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub seed: u64,
}

impl TsneConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            perplexity: DEFAULT_PERPLEXITY,
            iterations: DEFAULT_ITERATIONS,
            learning_rate: DEFAULT_LEARNING_RATE,
            early_exaggeration: DEFAULT_EARLY_EXAGGERATION,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneFit {
    pub coords: Vec<[f64; 2]>,
    /// KL after each iteration's update.
    pub kl_trace: Vec<f64>,
    pub final_kl: f64,
    pub iterations: usize,
    pub affinities: Affinities,
}

impl TsneFit {
    /// KL once exaggeration has ended, if the run got that far.
    pub fn kl_after_exaggeration(&self) -> Option<f64> {
        self.kl_trace.get(EXAGGERATION_ITERS - 1).copied()
    }
}

fn validate_config(config: &TsneConfig) -> Result<()> {
    if config.iterations == 0 {
        return Err(Error::InvalidParams(
            "t-SNE needs at least one iteration".into(),
        ));
    }
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "learning rate must be positive, got {}",
            config.learning_rate
        )));
    }
    if !(config.early_exaggeration >= 1.0 && config.early_exaggeration.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "early exaggeration must be at least 1, got {}",
            config.early_exaggeration
        )));
    }
    Ok(())
}

/// Exact t-SNE to two dimensions.
pub fn tsne(rows: &[Vec<f64>], config: &TsneConfig) -> Result<TsneFit> {
    validate_config(config)?;
    let n = rows.len();
    let p = affinities(rows, config.perplexity)?;
    // A row whose nearest distance is shared by at least `perplexity` points
    // cannot get below that entropy; the search leaves such rows at its cap.
    let attainable = |i: usize| {
        let others: Vec<f64> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                rows[i]
                    .iter()
                    .zip(&rows[j])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum()
            })
            .collect();
        let min = others.iter().copied().fold(f64::INFINITY, f64::min);
        let ties = others.iter().filter(|&&v| v == min).count();
        (ties as f64) < config.perplexity
    };
    for (i, &perp) in p.row_perplexity.iter().enumerate() {
        if (perp - config.perplexity).abs() > PERPLEXITY_TOL && attainable(i) {
            return Err(Error::Degenerate(format!(
                "row {i}: bandwidth search reached perplexity {perp}, target {}",
                config.perplexity
            )));
        }
    }

    let mut rng = rng::stream(config.seed, 0);
    let normal = Normal::new(0.0, INIT_STDDEV).expect("valid stddev");
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)])
        .collect();
    let mut update = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut kl_trace = Vec::with_capacity(config.iterations);

    for iter in 0..config.iterations {
        let (exaggeration, momentum) = if iter < EXAGGERATION_ITERS {
            (config.early_exaggeration, INITIAL_MOMENTUM)
        } else {
            (1.0, FINAL_MOMENTUM)
        };
        let grad = gradient(&p, &y, exaggeration);
        for i in 0..n {
            for k in 0..2 {
                let g = grad[i][k];
                gains[i][k] = if (g > 0.0) != (update[i][k] > 0.0) {
                    gains[i][k] + 0.2
                } else {
                    (gains[i][k] * 0.8).max(MIN_GAIN)
                };
                update[i][k] = momentum * update[i][k] - config.learning_rate * gains[i][k] * g;
                y[i][k] += update[i][k];
            }
        }
        let mut mean = [0.0; 2];
        for yi in &y {
            mean[0] += yi[0];
            mean[1] += yi[1];
        }
        for yi in &mut y {
            yi[0] -= mean[0] / n as f64;
            yi[1] -= mean[1] / n as f64;
        }
        let kl = kl_divergence(&p, &y);
        if !kl.is_finite() {
            return Err(Error::Degenerate(format!(
                "KL divergence became {kl} at iteration {}",
                iter + 1
            )));
        }
        kl_trace.push(kl);
    }
    Ok(TsneFit {
        final_kl: *kl_trace.last().expect("at least one iteration"),
        iterations: config.iterations,
        coords: y,
        kl_trace,
        affinities: p,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pca,
    Tsne,
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pca" => Ok(Method::Pca),
            "tsne" => Ok(Method::Tsne),
            other => Err(format!(
                "unknown projection method `{other}` (expected pca or tsne)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub name: String,
    pub label: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Diagnostics {
    Pca {
        explained_variance_ratio: Vec<f64>,
    },
    Tsne {
        final_kl: f64,
        iterations: usize,
        perplexity: f64,
        pca_dims: usize,
        kl_after_exaggeration: Option<f64>,
        max_perplexity_error: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection2D {
    pub method: Method,
    pub points: Vec<ProjectedPoint>,
    pub diagnostics: Diagnostics,
}

impl Projection2D {
    /// `name,label,x,y` rows in input order.
    pub fn write_csv<W: Write>(&self, mut sink: W) -> io::Result<()> {
        writeln!(sink, "name,label,x,y")?;
        for p in &self.points {
            writeln!(
                sink,
                "{},{},{},{}",
                csv_field(&p.name),
                csv_field(&p.label),
                p.x,
                p.y
            )?;
        }
        sink.flush()
    }

    pub fn diagnostics_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&serde_json::json!({
            "method": self.method,
            "points": self.points.len(),
            "diagnostics": self.diagnostics,
        }))
        .expect("diagnostics are serializable");
        s.push('\n');
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Options for [`project`]. `perplexity: None` means the default, clamped
/// just below the feasibility bound for small inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectOptions {
    pub method: Method,
    pub pca_dims: Option<usize>,
    pub perplexity: Option<f64>,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub seed: u64,
}

impl ProjectOptions {
    pub fn pca() -> Self {
        Self {
            method: Method::Pca,
            pca_dims: None,
            perplexity: None,
            iterations: DEFAULT_ITERATIONS,
            learning_rate: DEFAULT_LEARNING_RATE,
            early_exaggeration: DEFAULT_EARLY_EXAGGERATION,
            seed: 0,
        }
    }

    pub fn tsne(seed: u64) -> Self {
        Self {
            method: Method::Tsne,
            seed,
            ..Self::pca()
        }
    }
}

/// Resolved perplexity for `n` points.
pub fn resolve_perplexity(requested: Option<f64>, n: usize) -> f64 {
    match requested {
        Some(p) => p,
        None => DEFAULT_PERPLEXITY.min(perplexity_bound(n).next_down()),
    }
}

/// Projects every embedding to 2-D. `labels[i]` tags point `i`.
pub fn project(
    vectors: &EmbeddingSet,
    labels: &[String],
    options: &ProjectOptions,
) -> Result<Projection2D> {
    let n = vectors.len();
    assert_eq!(labels.len(), n, "one label per embedding");
    let rows = vectors.to_f64_rows();
    let (coords, diagnostics): (Vec<[f64; 2]>, Diagnostics) = match options.method {
        Method::Pca => {
            let fit = pca_rows(&rows, 2)?;
            (
                fit.projected.iter().map(|z| [z[0], z[1]]).collect(),
                Diagnostics::Pca {
                    explained_variance_ratio: fit.explained_variance_ratio,
                },
            )
        }
        Method::Tsne => {
            let perplexity = resolve_perplexity(options.perplexity, n);
            check_perplexity(perplexity, n)?;
            let pca_dims = options
                .pca_dims
                .unwrap_or(DEFAULT_PCA_DIMS)
                .min(vectors.dim())
                .min(n);
            let reduced = pca_rows(&rows, pca_dims)?.projected;
            let config = TsneConfig {
                perplexity,
                iterations: options.iterations,
                learning_rate: options.learning_rate,
                early_exaggeration: options.early_exaggeration,
                seed: options.seed,
            };
            let fit = tsne(&reduced, &config)?;
            let diagnostics = Diagnostics::Tsne {
                final_kl: fit.final_kl,
                iterations: fit.iterations,
                perplexity,
                pca_dims,
                kl_after_exaggeration: fit.kl_after_exaggeration(),
                max_perplexity_error: fit.affinities.max_perplexity_error(perplexity),
            };
            (fit.coords, diagnostics)
        }
    };
    if coords.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate(
            "projection produced non-finite coordinates".into(),
        ));
    }
    let points = vectors
        .names()
        .iter()
        .zip(labels)
        .zip(coords)
        .map(|((name, label), c)| ProjectedPoint {
            name: name.clone(),
            label: label.clone(),
            x: c[0],
            y: c[1],
        })
        .collect();
    Ok(Projection2D {
        method: options.method,
        points,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_rows(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
        let mut rng = rng::stream(seed, 0);
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    /// Cyclic Jacobi eigenvalues of a symmetric matrix.
    fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
        let n = a.len();
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[i][j] * a[i][j])
                .sum();
            if off < 1e-24 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    fn population_variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
        let n = values.clone().count() as f64;
        let m = values.clone().sum::<f64>() / n;
        values.map(|v| (v - m) * (v - m)).sum::<f64>() / n
    }

    #[test]
    fn pca_of_collinear_points_keeps_all_variance_on_one_axis() {
        let dir = [0.3, -1.0, 2.0, 0.5, 0.1];
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|t| dir.iter().map(|d| 1.0 + t as f64 * 0.7 * d).collect())
            .collect();
        let fit = pca_rows(&rows, 2).unwrap();
        assert!((fit.explained_variance_ratio[0] - 1.0).abs() < 1e-9);
        assert!(fit.explained_variance_ratio[1].abs() < 1e-9);
    }

    #[test]
    fn pca_full_rank_reconstructs_input() {
        let rows = random_rows(3, 20, 5);
        let fit = pca_rows(&rows, 5).unwrap();
        for (a, b) in rows.iter().zip(fit.reconstruct()) {
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-6 * x.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn pca_matches_jacobi_oracle() {
        let rows = random_rows(5, 50, 10);
        let fit = pca_rows(&rows, 10).unwrap();
        let total: f64 = fit.explained_variance_ratio.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        for w in fit.explained_variance_ratio.windows(2) {
            assert!(w[0] >= w[1]);
        }
        let mean: Vec<f64> = (0..10)
            .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / 50.0)
            .collect();
        let cov: Vec<Vec<f64>> = (0..10)
            .map(|a| {
                (0..10)
                    .map(|b| {
                        rows.iter()
                            .map(|r| (r[a] - mean[a]) * (r[b] - mean[b]))
                            .sum::<f64>()
                            / 50.0
                    })
                    .collect()
            })
            .collect();
        let oracle = jacobi_eigenvalues(cov);
        for k in 0..2 {
            let var = population_variance(fit.projected.iter().map(|z| z[k]));
            assert!(
                (var - oracle[k]).abs() < 1e-9,
                "axis {k}: {var} vs {}",
                oracle[k]
            );
        }
    }

    #[test]
    fn pca_sign_rule_and_gram_route() {
        let rows = random_rows(9, 6, 10);
        let fit = pca_rows(&rows, 3).unwrap();
        for c in &fit.components {
            let big = c
                .iter()
                .copied()
                .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(big > 0.0);
            assert!((c.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-9);
        }
        // Same data padded with rows so the covariance route is taken.
        let n = rows.len();
        let cov_route = {
            let mean: Vec<f64> = (0..10)
                .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
                .collect();
            let centered = DMatrix::from_fn(n, 10, |i, j| rows[i][j] - mean[j]);
            let cov = centered.transpose() * &centered / n as f64;
            sorted_eigen(cov)
        };
        for (k, c) in fit.components.iter().enumerate() {
            let mut axis = cov_route[k].1.clone();
            orient(&mut axis);
            assert!((cov_route[k].0 - fit.explained_variance[k]).abs() < 1e-9);
            for (a, b) in axis.iter().zip(c) {
                assert!((a - b).abs() < 1e-7, "axis {k}");
            }
        }
    }

    #[test]
    fn pca_rejects_degenerate_requests() {
        assert!(matches!(
            pca_rows(&[vec![1.0, 2.0]], 1),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            pca_rows(&random_rows(1, 5, 3), 4),
            Err(Error::InvalidParams(_))
        ));
    }

    #[test]
    fn affinities_hit_target_perplexity() {
        let rows = random_rows(11, 30, 4);
        let p = affinities(&rows, 7.0).unwrap();
        assert!(p.max_perplexity_error(7.0) < 1e-4);
        let total: f64 = p.p.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(p.p.iter().all(|&v| v >= 0.0));
        for i in 0..30 {
            assert_eq!(p.get(i, i), 0.0);
            for j in 0..30 {
                assert_eq!(p.get(i, j), p.get(j, i));
            }
        }
    }

    #[test]
    fn identical_inputs_give_uniform_affinities() {
        let rows = vec![vec![0.5, -2.0, 1.0]; 10];
        let p = affinities(&rows, 2.0).unwrap();
        let expect = 1.0 / 90.0;
        for i in 0..10 {
            for j in 0..10 {
                if i != j {
                    assert!((p.get(i, j) - expect).abs() < 1e-15);
                }
            }
        }
        let fit = tsne(
            &rows,
            &TsneConfig {
                iterations: 50,
                perplexity: 2.0,
                ..TsneConfig::new(1)
            },
        )
        .unwrap();
        assert!(fit.final_kl.is_finite());
    }

    #[test]
    fn perplexity_bounds() {
        let rows = random_rows(2, 100, 3);
        assert!(matches!(
            affinities(&rows, 90.0),
            Err(Error::InfeasiblePerplexity { bound, .. }) if (bound - 33.0).abs() < 1e-12
        ));
        assert!(affinities(&rows, 1.0).is_err());
        assert!(affinities(&random_rows(2, 3, 3), 1.5).is_err());
        let p = resolve_perplexity(None, 20);
        assert!(p < 19.0 / 3.0 && p > 6.3);
        assert_eq!(resolve_perplexity(None, 1000), 30.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let rows = random_rows(4, 20, 5);
        let p = affinities(&rows, 5.0).unwrap();
        let mut rng = rng::stream(4, 1);
        let y: Vec<[f64; 2]> = (0..20)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let g = kl_gradient(&p, &y);
        let h = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..20 {
            for k in 0..2 {
                let mut plus = y.clone();
                let mut minus = y.clone();
                plus[i][k] += h;
                minus[i][k] -= h;
                let fd = (kl_divergence(&p, &plus) - kl_divergence(&p, &minus)) / (2.0 * h);
                worst = worst.max((g[i][k] - fd).abs() / g[i][k].abs().max(fd.abs()));
            }
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    fn silhouette(points: &[[f64; 2]], labels: &[usize]) -> f64 {
        let dist =
            |a: &[f64; 2], b: &[f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        let mut total = 0.0;
        for (i, p) in points.iter().enumerate() {
            let mean_to = |label: usize| {
                let others: Vec<f64> = points
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i && labels[j] == label)
                    .map(|(_, q)| dist(p, q))
                    .collect();
                others.iter().sum::<f64>() / others.len() as f64
            };
            let a = mean_to(labels[i]);
            let b = mean_to(1 - labels[i]);
            total += (b - a) / a.max(b);
        }
        total / points.len() as f64
    }

    #[test]
    fn tsne_separates_two_clusters() {
        let mut rng = rng::stream(6, 0);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..2 {
            for _ in 0..10 {
                rows.push(
                    (0..5)
                        .map(|_| c as f64 * 10.0 + normal.sample(&mut rng))
                        .collect::<Vec<f64>>(),
                );
                labels.push(c);
            }
        }
        let fit = tsne(
            &rows,
            &TsneConfig {
                perplexity: 5.0,
                ..TsneConfig::new(42)
            },
        )
        .unwrap();
        let s = silhouette(&fit.coords, &labels);
        assert!(s > 0.5, "silhouette {s}");
        assert!(fit.final_kl <= fit.kl_after_exaggeration().unwrap());
        assert!(fit.kl_trace.iter().all(|k| k.is_finite()));
        assert!(fit.affinities.max_perplexity_error(5.0) < PERPLEXITY_TOL);

        let again = tsne(
            &rows,
            &TsneConfig {
                perplexity: 5.0,
                ..TsneConfig::new(42)
            },
        )
        .unwrap();
        assert_eq!(fit.coords, again.coords);
        let other = tsne(
            &rows,
            &TsneConfig {
                perplexity: 5.0,
                ..TsneConfig::new(43)
            },
        )
        .unwrap();
        assert_ne!(fit.coords, other.coords);
    }

    #[test]
    fn project_writes_csv_rows() {
        let rows = random_rows(8, 12, 4);
        let set = EmbeddingSet::new(
            crate::EmbeddingKind::PerClass,
            4,
            rows.iter()
                .enumerate()
                .map(|(i, r)| (format!("c{i:02}"), r.iter().map(|&v| v as f32).collect()))
                .collect(),
        )
        .unwrap();
        let labels = vec!["x".to_string(); 12];
        let proj = project(&set, &labels, &ProjectOptions::pca()).unwrap();
        let mut csv = Vec::new();
        proj.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 13);
        assert!(text.starts_with("name,label,x,y\nc00,x,"));
        match &proj.diagnostics {
            Diagnostics::Pca {
                explained_variance_ratio,
            } => {
                assert_eq!(explained_variance_ratio.len(), 2);
                assert!(explained_variance_ratio.iter().sum::<f64>() <= 1.0 + 1e-12);
            }
            other => panic!("unexpected diagnostics {other:?}"),
        }
        let t = project(
            &set,
            &labels,
            &ProjectOptions {
                iterations: 300,
                ..ProjectOptions::tsne(3)
            },
        )
        .unwrap();
        assert!(matches!(
            t.diagnostics,
            Diagnostics::Tsne { pca_dims: 4, .. }
        ));
        assert!(t.diagnostics_json().contains("\"final_kl\""));
    }
}
