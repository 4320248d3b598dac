//! Probability views of embeddings, symmetric KL divergence, the global
//! distribution alignment loss and the pairwise cross-view divergence matrix.
//!
//! A node's distribution is the softmax of its embedding row. A view's global
//! distribution is the softmax over all `N·d` entries of the view. Every
//! softmax output is floored at [`PROB_FLOOR`] and renormalized, and every
//! logarithm takes `max(p, PROB_FLOOR)`.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const PROB_FLOOR: f64 = 1e-12;

/// Lower bound applied to every entry of the pairwise divergence matrix.
pub const SKL_FLOOR: f64 = 1e-12;

/// Row block size used when materializing the pairwise divergence matrix.
pub const DEFAULT_BLOCK_ROWS: usize = 256;

#[inline]
fn ln_floor(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// A strictly positive probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates positivity and normalization (to 1e-9).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Shape("empty distribution".into()));
        }
        if probs.iter().any(|&p| p <= 0.0 || !p.is_finite()) {
            return Err(Error::Numeric(
                "probabilities must be positive and finite".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Numeric(format!("probabilities sum to {total}")));
        }
        Ok(Self(probs))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Softmax of `z`, floored and renormalized.
pub fn node_distribution(z: &[f64]) -> Result<ProbVector> {
    if z.is_empty() {
        return Err(Error::Shape("empty embedding".into()));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("embedding has non-finite entries".into()));
    }
    let row = Array2::from_shape_vec((1, z.len()), z.to_vec()).expect("1 x d");
    let soft = RowSoftmax::forward(row.view());
    Ok(ProbVector(soft.probs.into_raw_vec()))
}

/// `KL(P‖Q) + KL(Q‖P)` in nats.
pub fn skl_divergence(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!(
            "distributions of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    Ok(skl_slices(p.as_slice(), q.as_slice()))
}

fn skl_slices(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| (a - b) * (ln_floor(a) - ln_floor(b)))
        .sum()
}

/// Row-wise softmax with floor-and-renormalize, keeping what the backward
/// pass needs.
#[derive(Debug, Clone)]
pub struct RowSoftmax {
    pub probs: Array2<f64>,
    raw: Array2<f64>,
    sums: Array1<f64>,
}

impl RowSoftmax {
    pub fn forward(z: ArrayView2<f64>) -> Self {
        let mut raw = z.to_owned();
        for mut row in raw.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let total = row.sum();
            row /= total;
        }
        let mut probs = raw.mapv(|v| v.max(PROB_FLOOR));
        let sums = probs.sum_axis(Axis(1));
        for (mut row, &s) in probs.rows_mut().into_iter().zip(&sums) {
            row /= s;
        }
        Self { probs, raw, sums }
    }

    /// Maps a gradient with respect to `probs` to one with respect to the
    /// softmax input.
    pub fn backward(&self, grad_probs: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(self.probs.raw_dim());
        Zip::from(out.rows_mut())
            .and(grad_probs.rows())
            .and(self.probs.rows())
            .and(self.raw.rows())
            .and(&self.sums)
            .for_each(|mut out, g, p, q, &s| {
                // renormalization
                let gp: f64 = g.dot(&p);
                // floor: entries below it were replaced by a constant
                let mut gq = Array1::zeros(g.len());
                for k in 0..g.len() {
                    if q[k] >= PROB_FLOOR {
                        gq[k] = (g[k] - gp) / s;
                    }
                }
                // softmax
                let inner: f64 = gq.dot(&q);
                for k in 0..g.len() {
                    out[k] = q[k] * (gq[k] - inner);
                }
            });
        out
    }
}

/// SKL between two distributions given as equally shaped arrays (row-wise
/// sum), plus the gradients with respect to each argument.
fn skl_with_grad(p: &Array2<f64>, q: &Array2<f64>) -> (f64, Array2<f64>, Array2<f64>) {
    let mut value = 0.0;
    let mut gp = Array2::zeros(p.raw_dim());
    let mut gq = Array2::zeros(q.raw_dim());
    Zip::from(&mut gp)
        .and(&mut gq)
        .and(p)
        .and(q)
        .for_each(|gp, gq, &a, &b| {
            let (la, lb) = (ln_floor(a), ln_floor(b));
            value += (a - b) * (la - lb);
            *gp = la - lb + 1.0 - b / a;
            *gq = lb - la + 1.0 - a / b;
        });
    (value, gp, gq)
}

fn check_same_shape(z1: &Array2<f64>, z2: &Array2<f64>) -> Result<()> {
    if z1.dim() != z2.dim() {
        return Err(Error::Shape(format!(
            "views have shapes {:?} and {:?}",
            z1.dim(),
            z2.dim()
        )));
    }
    if z1.is_empty() {
        return Err(Error::Shape("empty embeddings".into()));
    }
    Ok(())
}

/// Value and gradients of the global distribution alignment loss.
#[derive(Debug, Clone)]
pub struct GdaOutput {
    pub loss: f64,
    /// SKL between the two flattened global distributions.
    pub global_term: f64,
    /// Sum over nodes of the node-level SKL.
    pub node_term: f64,
    pub grad_z1: Array2<f64>,
    pub grad_z2: Array2<f64>,
}

/// SKL between the global distributions of the two views plus the sum of
/// per-node SKL terms.
pub fn gda_loss(z1: &Array2<f64>, z2: &Array2<f64>) -> Result<f64> {
    gda_loss_with_grad(z1, z2).map(|o| o.loss)
}

pub fn gda_loss_with_grad(z1: &Array2<f64>, z2: &Array2<f64>) -> Result<GdaOutput> {
    check_same_shape(z1, z2)?;
    let (n, d) = z1.dim();

    let flat = |z: &Array2<f64>| {
        z.to_owned()
            .into_shape((1, n * d))
            .expect("contiguous reshape")
    };
    let g1 = RowSoftmax::forward(flat(z1).view());
    let g2 = RowSoftmax::forward(flat(z2).view());
    let (global_term, gp1, gp2) = skl_with_grad(&g1.probs, &g2.probs);
    let global_z1 = g1.backward(&gp1).into_shape((n, d)).expect("reshape back");
    let global_z2 = g2.backward(&gp2).into_shape((n, d)).expect("reshape back");

    let r1 = RowSoftmax::forward(z1.view());
    let r2 = RowSoftmax::forward(z2.view());
    let (node_term, np1, np2) = skl_with_grad(&r1.probs, &r2.probs);
    let grad_z1 = global_z1 + r1.backward(&np1);
    let grad_z2 = global_z2 + r2.backward(&np2);

    Ok(GdaOutput {
        loss: global_term + node_term,
        global_term,
        node_term,
        grad_z1,
        grad_z2,
    })
}

/// Node-level pairwise cross-view SKL matrix: entry `(i, j)` compares node
/// `i` in view 1 with node `j` in view 2.
#[derive(Debug, Clone, PartialEq)]
pub struct SklMatrix {
    pub values: Array2<f64>,
}

impl SklMatrix {
    /// Wraps an existing matrix, checking it is square and strictly positive.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if !values.is_square() {
            return Err(Error::Shape(format!(
                "divergence matrix {:?}",
                values.dim()
            )));
        }
        if values.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
            return Err(Error::Numeric(
                "divergence matrix must be strictly positive".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }
}

/// Pairwise divergence matrix with the state needed for back-propagation.
#[derive(Debug, Clone)]
pub struct PairwiseSkl {
    pub matrix: SklMatrix,
    p: RowSoftmax,
    q: RowSoftmax,
}

/// `K_ij = skl(softmax(z1_i), softmax(z2_j))`, floored at [`SKL_FLOOR`].
pub fn pairwise_skl_matrix(z1: &Array2<f64>, z2: &Array2<f64>) -> Result<SklMatrix> {
    PairwiseSkl::forward(z1, z2, DEFAULT_BLOCK_ROWS).map(|k| k.matrix)
}

impl PairwiseSkl {
    /// Computes the matrix in row blocks of `block_rows` via the expansion
    /// `K_ij = Σ p ln p + Σ q ln q − (P lnQᵀ)_ij − (lnP Qᵀ)_ij`.
    pub fn forward(z1: &Array2<f64>, z2: &Array2<f64>, block_rows: usize) -> Result<Self> {
        check_same_shape(z1, z2)?;
        if block_rows == 0 {
            return Err(Error::Parameter("block_rows must be positive".into()));
        }
        let p = RowSoftmax::forward(z1.view());
        let q = RowSoftmax::forward(z2.view());
        let values = pairwise_from_probs(&p.probs, &q.probs, block_rows);
        Ok(Self {
            matrix: SklMatrix { values },
            p,
            q,
        })
    }

    /// Gradients with respect to `z1`, `z2` given `∂L/∂K`. Floored entries
    /// pass no gradient.
    pub fn backward(&self, grad_k: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let mut g = grad_k.clone();
        Zip::from(&mut g)
            .and(&self.matrix.values)
            .for_each(|g, &k| {
                if k <= SKL_FLOOR {
                    *g = 0.0;
                }
            });
        let p = &self.p.probs;
        let q = &self.q.probs;
        let ln_p = p.mapv(ln_floor);
        let ln_q = q.mapv(ln_floor);
        let row_sum = g.sum_axis(Axis(1)).insert_axis(Axis(1));
        let col_sum = g.sum_axis(Axis(0)).insert_axis(Axis(1));

        let grad_p = &row_sum * &ln_p.mapv(|v| v + 1.0) - g.dot(&ln_q) - g.dot(q) / p;
        let gt = g.t();
        let grad_q = &col_sum * &ln_q.mapv(|v| v + 1.0) - gt.dot(&ln_p) - gt.dot(p) / q;
        (self.p.backward(&grad_p), self.q.backward(&grad_q))
    }
}

fn pairwise_from_probs(p: &Array2<f64>, q: &Array2<f64>, block_rows: usize) -> Array2<f64> {
    let n = p.nrows();
    let m = q.nrows();
    let ln_p = p.mapv(ln_floor);
    let ln_q = q.mapv(ln_floor);
    let self_p: Array1<f64> = (p * &ln_p).sum_axis(Axis(1));
    let self_q: Array1<f64> = (q * &ln_q).sum_axis(Axis(1));
    let ln_q_t = ln_q.t();
    let q_t = q.t();

    let mut values = Array2::zeros((n, m));
    values
        .axis_chunks_iter_mut(Axis(0), block_rows)
        .into_par_iter()
        .enumerate()
        .for_each(|(b, mut block)| {
            let start = b * block_rows;
            let rows = block.nrows();
            let pb = p.slice(ndarray::s![start..start + rows, ..]);
            let lb = ln_p.slice(ndarray::s![start..start + rows, ..]);
            let cross = pb.dot(&ln_q_t) + lb.dot(&q_t);
            for (r, (mut out, cross)) in block.rows_mut().into_iter().zip(cross.rows()).enumerate()
            {
                let a = self_p[start + r];
                for ((o, &c), &bq) in out.iter_mut().zip(cross).zip(&self_q) {
                    *o = (a + bq - c).max(SKL_FLOOR);
                }
            }
        });
    values
}
