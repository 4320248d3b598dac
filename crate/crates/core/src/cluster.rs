//! K-means over embeddings and external clustering metrics.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    /// Independent restarts; the lowest inertia wins.
    pub n_init: usize,
    pub max_iter: usize,
    /// Stop once the relative inertia improvement drops below this.
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            n_init: 10,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub assignments: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
    pub seed: u64,
    /// Inertia after each Lloyd assignment step of the winning restart.
    pub inertia_history: Vec<f64>,
}

/// Lloyd's algorithm with greedy k-means++ seeding and the default restart
/// settings.
pub fn kmeans(
    z: &Array2<f64>,
    n_clusters: usize,
    seed: u64,
    max_iter: usize,
) -> Result<ClusterResult> {
    let cfg = KMeansConfig {
        max_iter,
        ..KMeansConfig::default()
    };
    kmeans_with(z, n_clusters, seed, &cfg)
}

pub fn kmeans_with(
    z: &Array2<f64>,
    n_clusters: usize,
    seed: u64,
    cfg: &KMeansConfig,
) -> Result<ClusterResult> {
    let n = z.nrows();
    if n_clusters == 0 {
        return Err(Error::Parameter("need at least one cluster".into()));
    }
    if n_clusters > n {
        return Err(Error::Parameter(format!(
            "{n_clusters} clusters requested for {n} points"
        )));
    }
    if cfg.n_init == 0 || cfg.max_iter == 0 {
        return Err(Error::Parameter(
            "n_init and max_iter must be positive".into(),
        ));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "k-means input has non-finite entries".into(),
        ));
    }

    let sq_norms: Array1<f64> = z.rows().into_iter().map(|r| r.dot(&r)).collect();
    let runs: Vec<ClusterResult> = (0..cfg.n_init)
        .into_par_iter()
        .map(|restart| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(restart as u64);
            lloyd(z, &sq_norms, n_clusters, cfg, &mut rng, seed)
        })
        .collect();
    // ties resolve to the earliest restart
    let best = runs
        .into_iter()
        .reduce(|best, r| if r.inertia < best.inertia { r } else { best })
        .expect("n_init > 0");
    Ok(best)
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy k-means++: each new center is the best of `2 + ln k` candidates
/// drawn proportionally to squared distance.
fn seed_centroids(z: &Array2<f64>, n_clusters: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = z.nrows();
    let trials = 2 + (n_clusters as f64).ln().floor() as usize;
    let mut centroids = Array2::zeros((n_clusters, z.ncols()));
    let first = rng.gen_range(0..n);
    centroids.row_mut(0).assign(&z.row(first));
    let mut closest: Vec<f64> = (0..n).map(|i| sq_dist(z.row(i), z.row(first))).collect();

    for c in 1..n_clusters {
        let total: f64 = closest.iter().sum();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let candidate = if total > 0.0 {
                let mut target = rng.gen::<f64>() * total;
                let mut pick = n - 1;
                for (i, &d) in closest.iter().enumerate() {
                    if target < d {
                        pick = i;
                        break;
                    }
                    target -= d;
                }
                pick
            } else {
                rng.gen_range(0..n)
            };
            let updated: Vec<f64> = closest
                .iter()
                .enumerate()
                .map(|(i, &d)| d.min(sq_dist(z.row(i), z.row(candidate))))
                .collect();
            let potential: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|(p, _, _)| potential < *p) {
                best = Some((potential, candidate, updated));
            }
        }
        let (_, pick, updated) = best.expect("at least two trials");
        centroids.row_mut(c).assign(&z.row(pick));
        closest = updated;
    }
    centroids
}

fn assign(z: &Array2<f64>, sq_norms: &Array1<f64>, centroids: &Array2<f64>) -> Vec<usize> {
    let cross = z.dot(&centroids.t());
    let c_norms: Vec<f64> = centroids.rows().into_iter().map(|r| r.dot(&r)).collect();
    cross
        .rows()
        .into_iter()
        .zip(sq_norms)
        .map(|(row, &xn)| {
            let mut best = (f64::INFINITY, 0);
            for (c, (&dot, &cn)) in row.iter().zip(&c_norms).enumerate() {
                let d = xn - 2.0 * dot + cn;
                if d < best.0 {
                    best = (d, c);
                }
            }
            best.1
        })
        .collect()
}

fn inertia_of(z: &Array2<f64>, assignments: &[usize], centroids: &Array2<f64>) -> f64 {
    assignments
        .iter()
        .enumerate()
        .map(|(i, &c)| sq_dist(z.row(i), centroids.row(c)))
        .sum()
}

/// Recomputes centroids as member means. Empty clusters take the point
/// farthest from its own centroid (not already used for another empty
/// cluster), and that point is reassigned to them.
fn update(z: &Array2<f64>, assignments: &mut [usize], centroids: &mut Array2<f64>) {
    let k = centroids.nrows();
    let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
    let mut counts = vec![0usize; k];
    for (i, &c) in assignments.iter().enumerate() {
        sums.row_mut(c).scaled_add(1.0, &z.row(i));
        counts[c] += 1;
    }
    let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
    if !empty.is_empty() {
        let mut far: Vec<(f64, usize)> = assignments
            .iter()
            .enumerate()
            .map(|(i, &c)| (sq_dist(z.row(i), centroids.row(c)), i))
            .collect();
        far.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut donors = far.into_iter().map(|(_, i)| i);
        for c in empty {
            // a donor must not empty its own cluster
            let i = donors
                .by_ref()
                .find(|&i| counts[assignments[i]] > 1)
                .expect("k <= n guarantees a donor");
            let old = assignments[i];
            sums.row_mut(old).scaled_add(-1.0, &z.row(i));
            counts[old] -= 1;
            sums.row_mut(c).assign(&z.row(i));
            counts[c] = 1;
            assignments[i] = c;
        }
    }
    for (c, (mut row, &count)) in centroids.rows_mut().into_iter().zip(&counts).enumerate() {
        row.assign(&sums.row(c));
        row /= count as f64;
    }
}

fn lloyd(
    z: &Array2<f64>,
    sq_norms: &Array1<f64>,
    n_clusters: usize,
    cfg: &KMeansConfig,
    rng: &mut ChaCha8Rng,
    seed: u64,
) -> ClusterResult {
    let mut centroids = seed_centroids(z, n_clusters, rng);
    let mut assignments = assign(z, sq_norms, &centroids);
    let mut history = Vec::new();
    let mut previous = f64::INFINITY;
    for _ in 0..cfg.max_iter {
        let current = inertia_of(z, &assignments, &centroids);
        history.push(current);
        update(z, &mut assignments, &mut centroids);
        let next = assign(z, sq_norms, &centroids);
        let unchanged = next == assignments;
        assignments = next;
        let converged = previous.is_finite()
            && (previous - current) <= cfg.tol * previous.max(f64::MIN_POSITIVE);
        previous = current;
        if unchanged || converged {
            break;
        }
    }
    update(z, &mut assignments, &mut centroids);
    let inertia = inertia_of(z, &assignments, &centroids);
    history.push(inertia);
    ClusterResult {
        assignments,
        centroids,
        inertia,
        seed,
        inertia_history: history,
    }
}

/// External clustering quality against ground truth, as fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
    pub f1: f64,
}

impl MetricsReport {
    /// Percentages rounded to one decimal.
    pub fn as_percentages(&self) -> Self {
        let pct = |v: f64| (v * 1000.0).round() / 10.0;
        Self {
            acc: pct(self.acc),
            nmi: pct(self.nmi),
            ari: pct(self.ari),
            f1: pct(self.f1),
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.acc, self.nmi, self.ari, self.f1]
    }
}

/// Relabels arbitrary ids to `0..k` in order of first appearance.
fn compact(ids: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::HashMap::new();
    let out = ids
        .iter()
        .map(|&v| {
            let next = map.len();
            *map.entry(v).or_insert(next)
        })
        .collect();
    (out, map.len())
}

fn contingency(pred: &[usize], kp: usize, truth: &[usize], kt: usize) -> Vec<Vec<u64>> {
    let mut table = vec![vec![0u64; kt]; kp];
    for (&p, &t) in pred.iter().zip(truth) {
        table[p][t] += 1;
    }
    table
}

/// Best one-to-one map from predicted cluster to class. Clusters left
/// without a class map to `None`.
pub fn best_matching(pred: &[usize], truth: &[usize]) -> Result<Vec<Option<usize>>> {
    check_lengths(pred, truth)?;
    let kp = pred.iter().max().map_or(0, |m| m + 1);
    let kt = truth.iter().max().map_or(0, |m| m + 1);
    let size = kp.max(kt);
    if size == 0 {
        return Ok(Vec::new());
    }
    let table = contingency(pred, kp, truth, kt);
    let weights = Matrix::from_fn(size, size, |(p, t)| {
        if p < kp && t < kt {
            table[p][t] as i64
        } else {
            0
        }
    });
    let (_, assignment) = kuhn_munkres(&weights);
    Ok((0..kp)
        .map(|p| Some(assignment[p]).filter(|&t| t < kt))
        .collect())
}

fn check_lengths(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

fn comb2(x: u64) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

fn entropy(counts: impl Iterator<Item = u64>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// ACC (optimal matching), NMI (arithmetic-mean normalization), ARI and
/// macro-F1 after mapping clusters through the ACC matching.
pub fn evaluate(pred: &[usize], truth: &[usize]) -> Result<MetricsReport> {
    check_lengths(pred, truth)?;
    if pred.is_empty() {
        return Err(Error::Degenerate("no predictions to evaluate".into()));
    }
    let n = pred.len() as f64;
    let (pred, kp) = compact(pred);
    let kt = truth.iter().max().map_or(0, |m| m + 1);
    let table = contingency(&pred, kp, truth, kt);
    let row_sums: Vec<u64> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<u64> = (0..kt).map(|t| table.iter().map(|r| r[t]).sum()).collect();

    let matching = best_matching(&pred, truth)?;
    let correct: u64 = matching
        .iter()
        .enumerate()
        .filter_map(|(p, t)| t.map(|t| table[p][t]))
        .sum();
    let acc = correct as f64 / n;

    // unmatched clusters get their own label beyond the class range
    let mapped: Vec<usize> = pred
        .iter()
        .map(|&p| matching[p].unwrap_or(kt + p))
        .collect();
    let f1 = macro_f1(&mapped, truth);

    let h_pred = entropy(row_sums.iter().copied(), n);
    let h_true = entropy(col_sums.iter().copied(), n);
    let mut mi = 0.0;
    for (p, row) in table.iter().enumerate() {
        for (t, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (row_sums[p] as f64 * col_sums[t] as f64)).ln();
            }
        }
    }
    let nmi = if h_pred == 0.0 && h_true == 0.0 {
        1.0
    } else {
        (mi / ((h_pred + h_true) / 2.0)).clamp(0.0, 1.0)
    };

    let index: f64 = table.iter().flatten().map(|&c| comb2(c)).sum();
    let sum_a: f64 = row_sums.iter().map(|&c| comb2(c)).sum();
    let sum_b: f64 = col_sums.iter().map(|&c| comb2(c)).sum();
    let expected = sum_a * sum_b / comb2(pred.len() as u64).max(f64::MIN_POSITIVE);
    let max_index = (sum_a + sum_b) / 2.0;
    let ari = if max_index == expected {
        1.0
    } else {
        (index - expected) / (max_index - expected)
    };

    Ok(MetricsReport { acc, nmi, ari, f1 })
}

/// Unweighted mean of per-label F1 over every label seen in either vector.
fn macro_f1(pred: &[usize], truth: &[usize]) -> f64 {
    let k = pred.iter().chain(truth).max().map_or(0, |m| m + 1);
    let mut tp = vec![0u64; k];
    let mut pred_count = vec![0u64; k];
    let mut true_count = vec![0u64; k];
    for (&p, &t) in pred.iter().zip(truth) {
        pred_count[p] += 1;
        true_count[t] += 1;
        if p == t {
            tp[p] += 1;
        }
    }
    let mut total = 0.0;
    let mut labels = 0usize;
    for c in 0..k {
        if pred_count[c] == 0 && true_count[c] == 0 {
            continue;
        }
        labels += 1;
        if tp[c] > 0 {
            let precision = tp[c] as f64 / pred_count[c] as f64;
            let recall = tp[c] as f64 / true_count[c] as f64;
            total += 2.0 * precision * recall / (precision + recall);
        }
    }
    total / labels as f64
}

/// Per-cluster means of `z` under `assignments` (helper for callers that
/// only have assignments).
pub fn centroids_of(z: &Array2<f64>, assignments: &[usize], n_clusters: usize) -> Array2<f64> {
    let mut sums = Array2::<f64>::zeros((n_clusters, z.ncols()));
    let mut counts = vec![0usize; n_clusters];
    for (i, &c) in assignments.iter().enumerate() {
        sums.row_mut(c).scaled_add(1.0, &z.row(i));
        counts[c] += 1;
    }
    for (mut row, &count) in sums.axis_iter_mut(Axis(0)).zip(&counts) {
        if count > 0 {
            row /= count as f64;
        }
    }
    sums
}
