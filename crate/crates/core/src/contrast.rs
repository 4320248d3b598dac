//! Cross-view similarity, neutral contrastive factor estimation and the
//! neighborhood neutral contrastive alignment loss.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::distributions::SklMatrix;
use crate::error::{Error, Result};
use crate::graph::Adjacency;

/// Added to the alignment loss denominator.
pub const NCA_EPS: f64 = 1e-12;

/// Scope of the min-max scaling applied to the similarity matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormScope {
    /// One min and max over all N² entries.
    #[default]
    Global,
    /// Min and max taken per row.
    Row,
}

impl std::str::FromStr for NormScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Self::Global),
            "row" => Ok(Self::Row),
            other => Err(Error::Parameter(format!("unknown norm scope {other:?}"))),
        }
    }
}

/// Cosine similarity between every view-1 row and every view-2 row, with the
/// unit vectors kept for the backward pass.
#[derive(Debug, Clone)]
pub struct CosineSimilarity {
    pub s: Array2<f64>,
    u1: Array2<f64>,
    u2: Array2<f64>,
    norms1: Array1<f64>,
    norms2: Array1<f64>,
}

fn unit_rows(z: &Array2<f64>, view: usize) -> Result<(Array2<f64>, Array1<f64>)> {
    let norms: Array1<f64> = z.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    if let Some(i) = norms.iter().position(|&n| n <= 0.0 || !n.is_finite()) {
        return Err(Error::Numeric(format!(
            "row {i} of view {view} has norm {}",
            norms[i]
        )));
    }
    let u = z / &norms.view().insert_axis(Axis(1));
    Ok((u, norms))
}

impl CosineSimilarity {
    pub fn forward(z1: &Array2<f64>, z2: &Array2<f64>) -> Result<Self> {
        if z1.ncols() != z2.ncols() {
            return Err(Error::Shape(format!(
                "views have {} and {} columns",
                z1.ncols(),
                z2.ncols()
            )));
        }
        let (u1, norms1) = unit_rows(z1, 1)?;
        let (u2, norms2) = unit_rows(z2, 2)?;
        let s = u1.dot(&u2.t());
        Ok(Self {
            s,
            u1,
            u2,
            norms1,
            norms2,
        })
    }

    /// Gradients with respect to `z1` and `z2` given `∂L/∂S`.
    pub fn backward(&self, grad_s: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let through = |g_u: Array2<f64>, u: &Array2<f64>, norms: &Array1<f64>| {
            let radial = (&g_u * u).sum_axis(Axis(1)).insert_axis(Axis(1));
            (g_u - &(u * &radial)) / norms.view().insert_axis(Axis(1))
        };
        let g1 = through(grad_s.dot(&self.u2), &self.u1, &self.norms1);
        let g2 = through(grad_s.t().dot(&self.u1), &self.u2, &self.norms2);
        (g1, g2)
    }
}

/// `S_ij = cos(z1_i, z2_j)`.
pub fn cross_view_similarity(z1: &Array2<f64>, z2: &Array2<f64>) -> Result<Array2<f64>> {
    CosineSimilarity::forward(z1, z2).map(|c| c.s)
}

fn minmax_slice(values: &mut [f64]) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for v in values {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.5 };
    }
}

/// Global min-max scaling to `[0, 1]`; a constant matrix maps to 0.5.
pub fn minmax_normalize(s: &Array2<f64>) -> Array2<f64> {
    minmax_normalize_scoped(s, NormScope::Global)
}

pub fn minmax_normalize_scoped(s: &Array2<f64>, scope: NormScope) -> Array2<f64> {
    let mut out = s.clone();
    match scope {
        NormScope::Global => minmax_slice(out.as_slice_mut().expect("standard layout")),
        NormScope::Row => {
            for mut row in out.rows_mut() {
                minmax_slice(row.as_slice_mut().expect("contiguous row"));
            }
        }
    }
    out
}

/// Mean of the diagonal of the normalized similarity.
pub fn similarity_threshold(norm_s: &Array2<f64>) -> Result<f64> {
    if !norm_s.is_square() || norm_s.is_empty() {
        return Err(Error::Shape(format!(
            "threshold needs a non-empty square matrix, got {:?}",
            norm_s.dim()
        )));
    }
    Ok(norm_s.diag().sum() / norm_s.nrows() as f64)
}

/// `norm(S) ⊙ A` as a dense matrix.
pub fn neighbor_masked(norm_s: &Array2<f64>, adj: &Adjacency) -> Array2<f64> {
    let mut out = Array2::zeros(norm_s.raw_dim());
    for i in 0..adj.n_nodes() {
        for &k in adj.neighbors(i) {
            out[[i, k]] = norm_s[[i, k]];
        }
    }
    out
}

/// Average over non-isolated nodes of the fraction of neighbors whose
/// normalized similarity reaches `xi`.
pub fn neutral_contrastive_factor(norm_s: &Array2<f64>, adj: &Adjacency, xi: f64) -> Result<f64> {
    if norm_s.dim() != (adj.n_nodes(), adj.n_nodes()) {
        return Err(Error::Shape(format!(
            "similarity {:?} for {} nodes",
            norm_s.dim(),
            adj.n_nodes()
        )));
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    for i in 0..adj.n_nodes() {
        let nbrs = adj.neighbors(i);
        if nbrs.is_empty() {
            continue;
        }
        let hits = nbrs.iter().filter(|&&k| norm_s[[i, k]] >= xi).count();
        total += hits as f64 / nbrs.len() as f64;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::Degenerate(
            "graph has no edges; the neutral contrastive factor is undefined".into(),
        ));
    }
    Ok(total / counted as f64)
}

/// Every similarity quantity derived from one pair of views.
#[derive(Debug, Clone)]
pub struct SimilarityState {
    pub cosine: Array2<f64>,
    pub normalized: Array2<f64>,
    pub neighbor_masked: Array2<f64>,
    pub threshold: f64,
    /// `None` when the graph has no edges.
    pub ncf: Option<f64>,
}

impl SimilarityState {
    pub fn compute(
        z1: &Array2<f64>,
        z2: &Array2<f64>,
        adj: &Adjacency,
        scope: NormScope,
    ) -> Result<Self> {
        let cosine = cross_view_similarity(z1, z2)?;
        let normalized = minmax_normalize_scoped(&cosine, scope);
        let threshold = similarity_threshold(&normalized)?;
        let ncf = match neutral_contrastive_factor(&normalized, adj, threshold) {
            Ok(eta) => Some(eta),
            Err(Error::Degenerate(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            neighbor_masked: neighbor_masked(&normalized, adj),
            cosine,
            normalized,
            threshold,
            ncf,
        })
    }
}

fn check_nca_inputs(k: &SklMatrix, adj: &Adjacency, eta: f64) -> Result<usize> {
    let n = k.n();
    if n < 2 {
        return Err(Error::Degenerate(
            "alignment loss needs at least two nodes".into(),
        ));
    }
    if adj.n_nodes() != n {
        return Err(Error::Shape(format!(
            "divergence matrix for {n} nodes, graph has {}",
            adj.n_nodes()
        )));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Parameter(format!("eta = {eta} outside [0, 1]")));
    }
    Ok(n)
}

/// Per node: `(K_ii + η Σ_{k∈N(i)} K_ik) / (|N(i)| + 1)` divided by the mean
/// off-diagonal row entry; averaged over nodes.
pub fn nca_loss(k: &SklMatrix, adj: &Adjacency, eta: f64) -> Result<f64> {
    nca_loss_with_grad(k, adj, eta).map(|(loss, _)| loss)
}

/// Loss and `∂L/∂K`.
pub fn nca_loss_with_grad(k: &SklMatrix, adj: &Adjacency, eta: f64) -> Result<(f64, Array2<f64>)> {
    let n = check_nca_inputs(k, adj, eta)?;
    let kv = &k.values;
    let inv_n = 1.0 / n as f64;
    let inv_rest = 1.0 / (n - 1) as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros((n, n));
    for i in 0..n {
        let row = kv.row(i);
        let nbrs = adj.neighbors(i);
        let scale = 1.0 / (nbrs.len() + 1) as f64;
        let neighbor_sum: f64 = nbrs.iter().map(|&j| row[j]).sum();
        let num = (row[i] + eta * neighbor_sum) * scale;
        let den = (row.sum() - row[i]) * inv_rest + NCA_EPS;
        loss += num / den;

        let mut g = grad.row_mut(i);
        let off = -num / (den * den) * inv_rest * inv_n;
        g.fill(off);
        g[i] = scale / den * inv_n;
        for &j in nbrs {
            g[j] += eta * scale / den * inv_n;
        }
    }
    Ok((loss * inv_n, grad))
}
