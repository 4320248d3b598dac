//! High-confidence pseudo-label selection, the high-confidence graph and the
//! adaptive feature-consistency contrastive loss.

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Adjacency;

/// How the top fraction of confident nodes is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionScope {
    /// One ranking over all nodes; exactly `⌊k·N⌋` (at least 1) are kept.
    #[default]
    Global,
    /// Each cluster keeps its own top `⌊k·|cluster|⌋` (at least 1 per
    /// non-empty cluster).
    PerCluster,
}

impl std::str::FromStr for SelectionScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Self::Global),
            "per-cluster" => Ok(Self::PerCluster),
            other => Err(Error::Parameter(format!(
                "unknown selection scope {other:?}"
            ))),
        }
    }
}

/// Nodes whose pseudo-labels are trusted, sorted by node id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighConfidenceSet {
    pub node_ids: Vec<usize>,
    pub pseudo_labels: Vec<usize>,
    /// Euclidean distance to the assigned centroid (smaller is more
    /// confident).
    pub confidence_scores: Vec<f64>,
}

impl HighConfidenceSet {
    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    /// Pseudo-label per node, `None` outside the set.
    pub fn label_map(&self, n_nodes: usize) -> Vec<Option<usize>> {
        let mut map = vec![None; n_nodes];
        for (&i, &c) in self.node_ids.iter().zip(&self.pseudo_labels) {
            map[i] = Some(c);
        }
        map
    }
}

fn distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Keeps the nodes closest to their assigned centroid. Ties go to the lower
/// node index.
pub fn select_high_confidence(
    fused: &Array2<f64>,
    assignments: &[usize],
    centroids: &Array2<f64>,
    k: f64,
    scope: SelectionScope,
) -> Result<HighConfidenceSet> {
    let n = fused.nrows();
    if !(k > 0.0 && k <= 1.0) {
        return Err(Error::Parameter(format!(
            "confidence fraction k = {k} outside (0, 1]"
        )));
    }
    if assignments.len() != n {
        return Err(Error::Shape(format!(
            "{} assignments for {n} nodes",
            assignments.len()
        )));
    }
    if n == 0 {
        return Err(Error::Degenerate("no nodes to select from".into()));
    }
    if centroids.ncols() != fused.ncols() {
        return Err(Error::Shape(format!(
            "centroids have {} columns, embeddings {}",
            centroids.ncols(),
            fused.ncols()
        )));
    }
    if let Some(&c) = assignments.iter().find(|&&c| c >= centroids.nrows()) {
        return Err(Error::Shape(format!("assignment {c} has no centroid")));
    }

    let scores: Vec<f64> = (0..n)
        .map(|i| distance(fused.row(i), centroids.row(assignments[i])))
        .collect();
    let by_confidence = |ids: &mut Vec<usize>| {
        ids.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    };

    let mut chosen: Vec<usize> = match scope {
        SelectionScope::Global => {
            let take = ((k * n as f64).floor() as usize).max(1);
            let mut ids: Vec<usize> = (0..n).collect();
            by_confidence(&mut ids);
            ids.truncate(take);
            ids
        }
        SelectionScope::PerCluster => {
            let mut members = vec![Vec::new(); centroids.nrows()];
            for (i, &c) in assignments.iter().enumerate() {
                members[c].push(i);
            }
            members
                .into_iter()
                .filter(|m| !m.is_empty())
                .flat_map(|mut m| {
                    let take = ((k * m.len() as f64).floor() as usize).max(1);
                    by_confidence(&mut m);
                    m.truncate(take);
                    m
                })
                .collect()
        }
    };
    chosen.sort_unstable();

    Ok(HighConfidenceSet {
        pseudo_labels: chosen.iter().map(|&i| assignments[i]).collect(),
        confidence_scores: chosen.iter().map(|&i| scores[i]).collect(),
        node_ids: chosen,
    })
}

/// Weighted graph with entries in `[0, 1]` and a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct HighConfidenceGraph {
    pub weights: Array2<f64>,
    /// Per node, the `j` with `H_ij > 0`, ascending.
    pub support_sets: Vec<Vec<usize>>,
}

impl HighConfidenceGraph {
    pub fn n_nodes(&self) -> usize {
        self.weights.nrows()
    }

    /// Undirected support: `(i, j)` is an edge when `H_ij > 0` or `H_ji > 0`.
    pub fn support_adjacency(&self) -> Adjacency {
        let edges = self
            .support_sets
            .iter()
            .enumerate()
            .flat_map(|(i, s)| s.iter().map(move |&j| (i, j)));
        Adjacency::from_edges(self.n_nodes(), edges).expect("indices in range")
    }

    /// Directed count of positive entries.
    pub fn n_support_entries(&self) -> usize {
        self.support_sets.iter().map(Vec::len).sum()
    }
}

/// For `i ≠ j`: 1 when both nodes are selected with the same pseudo-label,
/// otherwise `norm_s[i, j]` on original edges, otherwise 0.
pub fn build_high_confidence_graph(
    hc: &HighConfidenceSet,
    adj: &Adjacency,
    norm_s: &Array2<f64>,
) -> Result<HighConfidenceGraph> {
    let n = adj.n_nodes();
    if norm_s.dim() != (n, n) {
        return Err(Error::Shape(format!(
            "normalized similarity {:?} for {n} nodes",
            norm_s.dim()
        )));
    }
    if let Some(&i) = hc.node_ids.iter().find(|&&i| i >= n) {
        return Err(Error::Shape(format!("selected node {i} out of range")));
    }

    let mut weights = Array2::zeros((n, n));
    let n_groups = hc.pseudo_labels.iter().max().map_or(0, |m| m + 1);
    let mut groups = vec![Vec::new(); n_groups];
    for (&i, &c) in hc.node_ids.iter().zip(&hc.pseudo_labels) {
        groups[c].push(i);
    }
    for group in &groups {
        for &i in group {
            for &j in group {
                if i != j {
                    weights[[i, j]] = 1.0;
                }
            }
        }
    }
    let labels = hc.label_map(n);
    for i in 0..n {
        for &j in adj.neighbors(i) {
            let same = matches!((labels[i], labels[j]), (Some(a), Some(b)) if a == b);
            if !same {
                weights[[i, j]] = norm_s[[i, j]];
            }
        }
    }

    let support_sets = weights
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter(|(_, &w)| w > 0.0)
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    Ok(HighConfidenceGraph {
        weights,
        support_sets,
    })
}

fn check_afc_inputs(s: &Array2<f64>, h: &HighConfidenceGraph) -> Result<()> {
    if !s.is_square() || s.is_empty() {
        return Err(Error::Shape(format!("similarity {:?}", s.dim())));
    }
    if h.weights.dim() != s.dim() {
        return Err(Error::Shape(format!(
            "similarity {:?} vs graph {:?}",
            s.dim(),
            h.weights.dim()
        )));
    }
    Ok(())
}

/// Mean over nodes of
/// `−ln[(e^{S_ii} + Σ_k H_ik e^{S_ik}) / Σ_j e^{S_ij}]`.
pub fn afc_loss(s: &Array2<f64>, h: &HighConfidenceGraph) -> Result<f64> {
    afc_loss_with_grad(s, h).map(|(loss, _)| loss)
}

/// Loss and `∂L/∂S`, with `H` held constant.
pub fn afc_loss_with_grad(s: &Array2<f64>, h: &HighConfidenceGraph) -> Result<(f64, Array2<f64>)> {
    check_afc_inputs(s, h)?;
    let n = s.nrows();
    let inv_n = 1.0 / n as f64;
    let exp_s = s.mapv(f64::exp);
    let mut grad = Array2::zeros((n, n));
    let mut loss = 0.0;
    for (i, (row, mut g)) in exp_s
        .axis_iter(Axis(0))
        .zip(grad.axis_iter_mut(Axis(0)))
        .enumerate()
    {
        let den: f64 = row.sum();
        let num = row[i]
            + h.support_sets[i]
                .iter()
                .map(|&k| h.weights[[i, k]] * row[k])
                .sum::<f64>();
        loss -= (num / den).ln();
        for (j, gj) in g.iter_mut().enumerate() {
            *gj = row[j] / den * inv_n;
        }
        g[i] -= row[i] / num * inv_n;
        for &k in &h.support_sets[i] {
            g[k] -= h.weights[[i, k]] * row[k] / num * inv_n;
        }
    }
    Ok((loss * inv_n, grad))
}

/// `mean_i ln(N·e^{S_ii} / Σ_j e^{S_ij})`, the InfoNCE-form upper bound on
/// `−afc_loss`.
pub fn infonce_bound(s: &Array2<f64>) -> Result<f64> {
    if !s.is_square() || s.is_empty() {
        return Err(Error::Shape(format!("similarity {:?}", s.dim())));
    }
    let n = s.nrows() as f64;
    let total: f64 = s
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| (n * row[i].exp() / row.mapv(f64::exp).sum()).ln())
        .sum();
    Ok(total / n)
}
