//! Test-only oracles: finite differences and naive per-node / per-pair loops
//! written directly from the loss definitions, sharing no code with the
//! vectorized implementations.

#![allow(dead_code)]

use ndarray::Array2;
use neucgc::afc::HighConfidenceGraph;
use neucgc::graph::Adjacency;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FLOOR: f64 = 1e-12;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-scale..scale))
}

pub fn random_adjacency(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Adjacency {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Adjacency::from_edges(n, edges).unwrap()
}

/// Random weights in [0, 1] on a random support, zero diagonal.
pub fn random_h(rng: &mut ChaCha8Rng, n: usize, density: f64) -> HighConfidenceGraph {
    let mut weights = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.gen::<f64>() < density {
                weights[[i, j]] = rng.gen_range(0.0..=1.0);
            }
        }
    }
    h_from_weights(weights)
}

pub fn h_from_weights(weights: Array2<f64>) -> HighConfidenceGraph {
    let support_sets = weights
        .rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .filter(|(_, &w)| w > 0.0)
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    HighConfidenceGraph {
        weights,
        support_sets,
    }
}

/// Plain softmax, floored at 1e-12 and renormalized.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    let c: Vec<f64> = e.iter().map(|v| (v / s).max(FLOOR)).collect();
    let t: f64 = c.iter().sum();
    c.iter().map(|v| v / t).collect()
}

pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| a * (a.max(FLOOR).ln() - b.max(FLOOR).ln()))
        .sum()
}

pub fn skl(p: &[f64], q: &[f64]) -> f64 {
    kl(p, q) + kl(q, p)
}

pub fn naive_k(z1: &Array2<f64>, z2: &Array2<f64>) -> Array2<f64> {
    let n = z1.nrows();
    let p: Vec<Vec<f64>> = z1
        .rows()
        .into_iter()
        .map(|r| softmax(&r.to_vec()))
        .collect();
    let q: Vec<Vec<f64>> = z2
        .rows()
        .into_iter()
        .map(|r| softmax(&r.to_vec()))
        .collect();
    Array2::from_shape_fn((n, n), |(i, j)| skl(&p[i], &q[j]).max(FLOOR))
}

pub fn naive_gda(z1: &Array2<f64>, z2: &Array2<f64>) -> f64 {
    let g1 = softmax(&z1.iter().cloned().collect::<Vec<_>>());
    let g2 = softmax(&z2.iter().cloned().collect::<Vec<_>>());
    let mut total = skl(&g1, &g2);
    for (a, b) in z1.rows().into_iter().zip(z2.rows()) {
        total += skl(&softmax(&a.to_vec()), &softmax(&b.to_vec()));
    }
    total
}

pub fn naive_nca(k: &Array2<f64>, adj: &Adjacency, eta: f64) -> f64 {
    let n = k.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let mut neighbor = 0.0;
        let mut deg = 0usize;
        for j in 0..n {
            if adj.contains(i, j) {
                neighbor += k[[i, j]];
                deg += 1;
            }
        }
        let num = (k[[i, i]] + eta * neighbor) / (deg as f64 + 1.0);
        let mut rest = 0.0;
        for j in 0..n {
            if j != i {
                rest += k[[i, j]];
            }
        }
        total += num / (rest / (n as f64 - 1.0) + 1e-12);
    }
    total / n as f64
}

pub fn naive_cosine(z1: &Array2<f64>, z2: &Array2<f64>) -> Array2<f64> {
    let n = z1.nrows();
    Array2::from_shape_fn((n, n), |(i, j)| {
        let a = z1.row(i);
        let b = z2.row(j);
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    })
}

pub fn naive_afc(s: &Array2<f64>, h: &Array2<f64>) -> f64 {
    let n = s.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let mut num = s[[i, i]].exp();
        let mut den = 0.0;
        for j in 0..n {
            den += s[[i, j]].exp();
            if j != i && h[[i, j]] > 0.0 {
                num += h[[i, j]] * s[[i, j]].exp();
            }
        }
        total += -(num / den).ln();
    }
    total / n as f64
}

/// Central differences of `f` at `x`, perturbing each entry by `h`.
pub fn finite_diff(f: impl Fn(&Array2<f64>) -> f64, x: &Array2<f64>, h: f64) -> Array2<f64> {
    let mut grad = Array2::zeros(x.raw_dim());
    let mut probe = x.clone();
    for idx in ndarray::indices(x.raw_dim()) {
        let orig = probe[idx];
        probe[idx] = orig + h;
        let plus = f(&probe);
        probe[idx] = orig - h;
        let minus = f(&probe);
        probe[idx] = orig;
        grad[idx] = (plus - minus) / (2.0 * h);
    }
    grad
}

pub fn finite_diff_vec(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let plus = f(&probe);
            probe[i] = orig - h;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Largest entrywise relative error, with magnitudes below `floor` compared
/// absolutely against `floor`.
pub fn max_rel_error<'a>(
    analytic: impl IntoIterator<Item = &'a f64>,
    numeric: impl IntoIterator<Item = &'a f64>,
    floor: f64,
) -> f64 {
    analytic
        .into_iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Brute-force best accuracy over all relabelings of the predicted clusters.
pub fn brute_force_acc(pred: &[usize], truth: &[usize], k: usize) -> f64 {
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0usize;
    permute(&mut perm, 0, &mut |p| {
        let hits = pred.iter().zip(truth).filter(|(&a, &b)| p[a] == b).count();
        best = best.max(hits);
    });
    best as f64 / pred.len() as f64
}

fn permute(v: &mut Vec<usize>, start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == v.len() {
        visit(v);
        return;
    }
    for i in start..v.len() {
        v.swap(start, i);
        permute(v, start + 1, visit);
        v.swap(start, i);
    }
}

/// Random H whose per-row support never exceeds n / e^2 - 1 entries, the
/// sparsity under which the InfoNCE-form bound holds for cosine scores.
pub fn random_sparse_h(rng: &mut ChaCha8Rng, n: usize) -> HighConfidenceGraph {
    let cap = ((n as f64 / std::f64::consts::E.powi(2)).floor() as usize).saturating_sub(1);
    let mut weights = Array2::zeros((n, n));
    for i in 0..n {
        let take = rng.gen_range(0..=cap);
        for _ in 0..take {
            let j = rng.gen_range(0..n);
            if j != i {
                weights[[i, j]] = rng.gen_range(0.0..=1.0);
            }
        }
    }
    h_from_weights(weights)
}
