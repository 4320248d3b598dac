//! Attributed graphs: storage, text-file ingestion, homophily analytics and
//! planted-partition generation.
//!
//! Edges are undirected. Every loader and constructor symmetrizes the edge
//! list, drops self-loops and removes duplicates, so `n_edges` always counts
//! each undirected edge once.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEATURES_FILE: &str = "features.txt";
pub const EDGES_FILE: &str = "edges.txt";
pub const LABELS_FILE: &str = "labels.txt";

/// Undirected simple graph stored as sorted neighbor lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adjacency {
    neighbors: Vec<Vec<usize>>,
    n_edges: usize,
}

impl Adjacency {
    /// Builds an adjacency from an arbitrary edge list. Both directions are
    /// inserted, self-loops and repeats are discarded.
    pub fn from_edges<I>(n_nodes: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut neighbors = vec![Vec::new(); n_nodes];
        for (u, v) in edges {
            if u >= n_nodes || v >= n_nodes {
                return Err(Error::Shape(format!(
                    "edge ({u}, {v}) out of range for {n_nodes} nodes"
                )));
            }
            if u == v {
                continue;
            }
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        let mut twice = 0;
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
            twice += list.len();
        }
        Ok(Self {
            neighbors,
            n_edges: twice / 2,
        })
    }

    pub fn empty(n_nodes: usize) -> Self {
        Self {
            neighbors: vec![Vec::new(); n_nodes],
            n_edges: 0,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.neighbors.len()
    }

    /// Number of undirected edges.
    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    /// Iterates each undirected edge once as `(i, j)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
    }

    /// Dense 0/1 matrix.
    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.n_nodes();
        let mut a = Array2::zeros((n, n));
        for (i, list) in self.neighbors.iter().enumerate() {
            for &j in list {
                a[[i, j]] = 1.0;
            }
        }
        a
    }
}

/// Node attributes, undirected structure and optional ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributedGraph {
    attributes: Array2<f64>,
    adjacency: Adjacency,
    labels: Option<Vec<usize>>,
    n_classes: Option<usize>,
}

impl AttributedGraph {
    /// Assembles a graph. When labels are given the class count is
    /// `max(label) + 1`.
    pub fn new(
        attributes: Array2<f64>,
        adjacency: Adjacency,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = attributes.nrows();
        if adjacency.n_nodes() != n {
            return Err(Error::Shape(format!(
                "adjacency has {} nodes, attributes have {n} rows",
                adjacency.n_nodes()
            )));
        }
        let n_classes = match &labels {
            Some(y) if y.len() != n => {
                return Err(Error::Shape(format!("{} labels for {n} nodes", y.len())));
            }
            Some(y) => Some(y.iter().max().map_or(0, |m| m + 1)),
            None => None,
        };
        Ok(Self {
            attributes,
            adjacency,
            labels,
            n_classes,
        })
    }

    /// Overrides the class count (e.g. when some classes are absent from the
    /// label file). Every label must stay below it.
    pub fn with_n_classes(mut self, n_classes: usize) -> Result<Self> {
        if let Some(y) = &self.labels {
            if let Some(&bad) = y.iter().find(|&&l| l >= n_classes) {
                return Err(Error::Parameter(format!(
                    "label {bad} outside [0, {n_classes})"
                )));
            }
        }
        self.n_classes = Some(n_classes);
        Ok(self)
    }

    pub fn n_nodes(&self) -> usize {
        self.attributes.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.attributes.ncols()
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.n_edges()
    }

    pub fn attributes(&self) -> &Array2<f64> {
        &self.attributes
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn n_classes(&self) -> Option<usize> {
        self.n_classes
    }

    /// Same graph with the ground truth removed.
    pub fn without_labels(&self) -> Self {
        Self {
            labels: None,
            n_classes: None,
            ..self.clone()
        }
    }

    fn require_labels(&self) -> Result<&[usize]> {
        self.labels.as_deref().ok_or(Error::MissingLabels)
    }
}

/// Reads `features.txt`, `edges.txt` and (if present) `labels.txt` from a
/// dataset directory.
pub fn load_graph(data_dir: impl AsRef<Path>) -> Result<AttributedGraph> {
    let dir = data_dir.as_ref();

    let features_path = dir.join(FEATURES_FILE);
    let text = read(&features_path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| {
                    Error::format(&features_path, lineno + 1, format!("bad number {tok:?}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::format(
                    &features_path,
                    lineno + 1,
                    format!("expected {} columns, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    let attributes = Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect())
        .map_err(|e| Error::Shape(e.to_string()))?;

    let edges_path = dir.join(EDGES_FILE);
    let text = read(&edges_path)?;
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut toks = line.split_whitespace();
        let Some(a) = toks.next() else { continue };
        let b = toks
            .next()
            .ok_or_else(|| Error::format(&edges_path, lineno + 1, "expected two node ids"))?;
        let parse = |tok: &str| -> Result<usize> {
            let v: usize = tok.parse().map_err(|_| {
                Error::format(&edges_path, lineno + 1, format!("bad node id {tok:?}"))
            })?;
            if v >= n {
                return Err(Error::format(
                    &edges_path,
                    lineno + 1,
                    format!("node id {v} out of range for {n} nodes"),
                ));
            }
            Ok(v)
        };
        edges.push((parse(a)?, parse(b)?));
    }
    let adjacency = Adjacency::from_edges(n, edges)?;

    let labels_path = dir.join(LABELS_FILE);
    let labels = if labels_path.exists() {
        let text = read(&labels_path)?;
        let mut y = Vec::with_capacity(n);
        for (lineno, line) in text.lines().enumerate() {
            let tok = line.trim();
            if tok.is_empty() {
                continue;
            }
            y.push(tok.parse::<usize>().map_err(|_| {
                Error::format(&labels_path, lineno + 1, format!("bad label {tok:?}"))
            })?);
        }
        if y.len() != n {
            return Err(Error::format(
                &labels_path,
                y.len(),
                format!("{} labels for {n} nodes", y.len()),
            ));
        }
        Some(y)
    } else {
        None
    };

    AttributedGraph::new(attributes, adjacency, labels)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Load {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a graph in the directory layout read by [`load_graph`]. Reals are
/// printed in shortest round-trip form, so a reload is bit-exact.
pub fn write_graph(g: &AttributedGraph, data_dir: impl AsRef<Path>) -> Result<()> {
    let dir = data_dir.as_ref();
    fs::create_dir_all(dir)?;

    let mut out = String::new();
    for row in g.attributes.rows() {
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            first = false;
            write!(out, "{v:?}").unwrap();
        }
        out.push('\n');
    }
    fs::write(dir.join(FEATURES_FILE), out)?;

    let mut out = String::new();
    for (i, j) in g.adjacency.edges() {
        writeln!(out, "{i} {j}").unwrap();
    }
    fs::write(dir.join(EDGES_FILE), out)?;

    if let Some(y) = &g.labels {
        let mut out = String::new();
        for l in y {
            writeln!(out, "{l}").unwrap();
        }
        fs::write(dir.join(LABELS_FILE), out)?;
    }
    Ok(())
}

/// Fraction of undirected edges whose endpoints share a label.
pub fn homophily_ratio(g: &AttributedGraph) -> Result<f64> {
    homophily_ratio_of(g.adjacency(), g.require_labels()?)
}

pub fn homophily_ratio_of(adj: &Adjacency, labels: &[usize]) -> Result<f64> {
    if adj.n_edges() == 0 {
        return Err(Error::Degenerate("graph has no edges".into()));
    }
    let same = adj.edges().filter(|&(i, j)| labels[i] == labels[j]).count();
    Ok(same as f64 / adj.n_edges() as f64)
}

/// Mean over non-isolated nodes of the same-label share of the neighborhood.
pub fn neighborhood_homophily_ratio(g: &AttributedGraph) -> Result<f64> {
    neighborhood_homophily_ratio_of(g.adjacency(), g.require_labels()?)
}

pub fn neighborhood_homophily_ratio_of(adj: &Adjacency, labels: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    let mut counted = 0usize;
    for i in 0..adj.n_nodes() {
        let nbrs = adj.neighbors(i);
        if nbrs.is_empty() {
            continue;
        }
        let same = nbrs.iter().filter(|&&j| labels[j] == labels[i]).count();
        total += same as f64 / nbrs.len() as f64;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::Degenerate("every node is isolated".into()));
    }
    Ok(total / counted as f64)
}

/// Mean over all nodes of (same-label neighbors) / (same-label nodes in the
/// graph, the node itself included).
pub fn congener_ratio(g: &AttributedGraph) -> Result<f64> {
    congener_ratio_of(g.adjacency(), g.require_labels()?)
}

pub fn congener_ratio_of(adj: &Adjacency, labels: &[usize]) -> Result<f64> {
    let n = adj.n_nodes();
    if n == 0 {
        return Err(Error::Degenerate("empty graph".into()));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut class_size = vec![0usize; n_classes];
    for &l in labels {
        class_size[l] += 1;
    }
    let total: f64 = (0..n)
        .map(|i| {
            let same = adj
                .neighbors(i)
                .iter()
                .filter(|&&j| labels[j] == labels[i])
                .count();
            same as f64 / class_size[labels[i]] as f64
        })
        .sum();
    Ok(total / n as f64)
}

/// One row of dataset statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub n_nodes: usize,
    pub n_edges: usize,
    pub n_classes: usize,
    pub n_attributes: usize,
    pub homophily_ratio: f64,
    pub neighborhood_homophily_ratio: f64,
    pub congener_ratio: f64,
}

impl GraphStats {
    pub fn compute(g: &AttributedGraph) -> Result<Self> {
        Ok(Self {
            n_nodes: g.n_nodes(),
            n_edges: g.n_edges(),
            n_classes: g.n_classes().ok_or(Error::MissingLabels)?,
            n_attributes: g.n_features(),
            homophily_ratio: homophily_ratio(g)?,
            neighborhood_homophily_ratio: neighborhood_homophily_ratio(g)?,
            congener_ratio: congener_ratio(g)?,
        })
    }

    pub const HEADER: [&'static str; 7] = [
        "Nodes",
        "Edges",
        "Classes",
        "Attributes",
        "r_h",
        "r_nh",
        "delta",
    ];

    /// Tab-separated row in `HEADER` order. Ratios use two decimals, the
    /// congener ratio four.
    pub fn table_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{:.2}\t{:.2}\t{:.4}",
            self.n_nodes,
            self.n_edges,
            self.n_classes,
            self.n_attributes,
            self.homophily_ratio,
            self.neighborhood_homophily_ratio,
            self.congener_ratio
        )
    }
}

/// Planted-partition generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmParams {
    pub n_nodes: usize,
    pub n_classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Standard deviation of the isotropic Gaussian noise added to each
    /// class mean. Class means are drawn from a standard normal.
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for SbmParams {
    fn default() -> Self {
        Self {
            n_nodes: 300,
            n_classes: 3,
            p_in: 0.1,
            p_out: 0.005,
            feature_dim: 32,
            feature_noise: 1.0,
            seed: 0,
        }
    }
}

/// Samples a stochastic block model with equal-size contiguous blocks
/// (node `i` belongs to class `i * C / N`) and Gaussian class-mean features.
pub fn generate_sbm(params: &SbmParams) -> Result<AttributedGraph> {
    let SbmParams {
        n_nodes,
        n_classes,
        p_in,
        p_out,
        feature_dim,
        feature_noise,
        seed,
    } = *params;
    for (name, p) in [("p_in", p_in), ("p_out", p_out)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Parameter(format!(
                "{name} = {p} is not a probability"
            )));
        }
    }
    if n_classes < 2 {
        return Err(Error::Parameter("need at least two classes".into()));
    }
    if n_nodes < n_classes {
        return Err(Error::Parameter(format!(
            "{n_nodes} nodes cannot hold {n_classes} classes"
        )));
    }
    if feature_dim == 0 {
        return Err(Error::Parameter("feature_dim must be positive".into()));
    }
    if !(feature_noise >= 0.0 && feature_noise.is_finite()) {
        return Err(Error::Parameter(format!("feature_noise = {feature_noise}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n_nodes).map(|i| i * n_classes / n_nodes).collect();

    let mut edges = Vec::new();
    for i in 0..n_nodes {
        for j in (i + 1)..n_nodes {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }

    let means = Array2::from_shape_simple_fn((n_classes, feature_dim), || {
        rng.sample::<f64, _>(StandardNormal)
    });
    let mut attributes = Array2::zeros((n_nodes, feature_dim));
    for (i, mut row) in attributes.rows_mut().into_iter().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = means[[labels[i], c]] + feature_noise * rng.sample::<f64, _>(StandardNormal);
        }
    }

    let adjacency = Adjacency::from_edges(n_nodes, edges)?;
    AttributedGraph::new(attributes, adjacency, Some(labels))?.with_n_classes(n_classes)
}
