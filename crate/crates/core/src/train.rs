//! The optimization loop: encode, evaluate the three losses, combine them and
//! take an Adam step, once per epoch.
//!
//! Within an epoch the neutral contrastive factor and the high-confidence
//! graph are computed from the current embeddings and then held constant for
//! the backward pass.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::afc::{
    afc_loss_with_grad, build_high_confidence_graph, select_high_confidence, HighConfidenceGraph,
    SelectionScope,
};
use crate::cluster::{evaluate, kmeans_with, KMeansConfig, MetricsReport};
use crate::contrast::{
    minmax_normalize_scoped, nca_loss_with_grad, neutral_contrastive_factor, similarity_threshold,
    CosineSimilarity, NormScope,
};
use crate::distributions::{gda_loss_with_grad, PairwiseSkl, SklMatrix, DEFAULT_BLOCK_ROWS};
use crate::encoder::{
    init_encoders, preprocess, EmbeddingPair, EncoderConfig, EncoderGrads, EncoderPair,
    Preprocessing,
};
use crate::error::{Error, Result};
use crate::graph::{congener_ratio_of, homophily_ratio_of, Adjacency, AttributedGraph};
use crate::optim::Adam;

/// Learning rates searched during tuning.
pub const LEARNING_RATE_GRID: [f64; 3] = [1e-3, 1e-4, 1e-5];
/// Values searched for both loss weights.
pub const LAMBDA_GRID: [f64; 7] = [0.01, 0.1, 0.5, 1.0, 5.0, 10.0, 100.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    /// Epochs without sufficient improvement before stopping.
    pub patience: usize,
    /// Minimum relative improvement of the total loss that resets patience.
    pub rel_tol: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            patience: 50,
            rel_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub encoder: EncoderConfig,
    pub preprocessing: Preprocessing,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Weight of the feature-consistency loss.
    pub lambda1: f64,
    /// Weight of the global distribution alignment loss.
    pub lambda2: f64,
    /// Fraction of nodes whose pseudo-labels are trusted.
    pub k: f64,
    pub seed: u64,
    /// Cluster count; falls back to the graph's class count.
    pub n_clusters: Option<usize>,
    pub kmeans: KMeansConfig,
    /// Run K-means every this many epochs (1 = every epoch).
    pub kmeans_interval: usize,
    pub norm_scope: NormScope,
    pub selection_scope: SelectionScope,
    /// Replaces the estimated neutral contrastive factor (ablations).
    pub eta_override: Option<f64>,
    pub early_stop: Option<EarlyStop>,
    /// Row block size for the pairwise divergence matrix.
    pub block_rows: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            preprocessing: Preprocessing::None,
            learning_rate: 1e-3,
            epochs: 500,
            lambda1: 1.0,
            lambda2: 1.0,
            k: 0.5,
            seed: 0,
            n_clusters: None,
            kmeans: KMeansConfig::default(),
            kmeans_interval: 1,
            norm_scope: NormScope::Global,
            selection_scope: SelectionScope::Global,
            eta_override: None,
            early_stop: None,
            block_rows: DEFAULT_BLOCK_ROWS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v}"));
            }
        }
        if !(self.k > 0.0 && self.k <= 1.0) {
            return bad(format!("k = {} outside (0, 1]", self.k));
        }
        if self.kmeans_interval == 0 || self.block_rows == 0 {
            return bad("kmeans_interval and block_rows must be positive".into());
        }
        if let Some(eta) = self.eta_override {
            if !(0.0..=1.0).contains(&eta) {
                return bad(format!("eta override {eta} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// `l_nca + lambda1·l_afc + lambda2·l_gda`.
pub fn total_loss(l_nca: f64, l_afc: f64, l_gda: f64, lambda1: f64, lambda2: f64) -> f64 {
    l_nca + lambda1 * l_afc + lambda2 * l_gda
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub nca: f64,
    pub afc: f64,
    pub gda: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn is_finite(&self) -> bool {
        [self.nca, self.afc, self.gda, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Homophily of the support of the high-confidence graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphDiagnostics {
    pub homophily_ratio: f64,
    pub congener_ratio: f64,
}

/// Treats every positive entry of `h` as an undirected edge and measures it
/// against the ground truth.
pub fn run_diagnostics(h: &HighConfidenceGraph, labels: &[usize]) -> Result<GraphDiagnostics> {
    diagnostics_of(&h.support_adjacency(), labels)
}

pub fn diagnostics_of(adj: &Adjacency, labels: &[usize]) -> Result<GraphDiagnostics> {
    if labels.len() != adj.n_nodes() {
        return Err(Error::Shape(format!(
            "{} labels for {} nodes",
            labels.len(),
            adj.n_nodes()
        )));
    }
    Ok(GraphDiagnostics {
        homophily_ratio: homophily_ratio_of(adj, labels)?,
        congener_ratio: congener_ratio_of(adj, labels)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_nca: f64,
    pub l_afc: f64,
    pub l_gda: f64,
    pub l_total: f64,
    pub eta: f64,
    pub xi: f64,
    /// Positive entries of the high-confidence graph (directed count).
    pub hc_support: usize,
    pub hc_homophily: Option<f64>,
    pub hc_congener: Option<f64>,
    pub metrics: Option<MetricsReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainResult {
    pub per_epoch: Vec<EpochRecord>,
    pub final_assignments: Vec<usize>,
    pub final_metrics: Option<MetricsReport>,
    /// Epoch with the highest ACC, when labels are available.
    pub best_epoch: Option<(usize, MetricsReport)>,
    /// Homophily and congener ratio of the input graph, when labelled.
    pub input_diagnostics: Option<GraphDiagnostics>,
    pub encoder: EncoderPair,
}

/// Losses and the gradient with respect to both encoders, for a fixed
/// neutral contrastive factor and high-confidence graph.
pub fn objective_with_grad(
    enc: &EncoderPair,
    x: &Array2<f64>,
    adj: &Adjacency,
    eta: f64,
    h: &HighConfidenceGraph,
    lambda1: f64,
    lambda2: f64,
) -> Result<(LossBreakdown, EncoderGrads)> {
    let (emb, cache) = enc.forward(x)?;
    let cos = CosineSimilarity::forward(&emb.z1, &emb.z2)?;
    let (losses, g1, g2) = assemble(
        &emb,
        &cos,
        adj,
        eta,
        h,
        lambda1,
        lambda2,
        DEFAULT_BLOCK_ROWS,
    )?;
    Ok((losses, enc.backward(&cache, &g1, &g2)))
}

/// The three losses and the combined gradient with respect to `z1`, `z2`.
#[allow(clippy::too_many_arguments)]
fn assemble(
    emb: &EmbeddingPair,
    cos: &CosineSimilarity,
    adj: &Adjacency,
    eta: f64,
    h: &HighConfidenceGraph,
    lambda1: f64,
    lambda2: f64,
    block_rows: usize,
) -> Result<(LossBreakdown, Array2<f64>, Array2<f64>)> {
    let gda = gda_loss_with_grad(&emb.z1, &emb.z2)?;

    let pairwise = PairwiseSkl::forward(&emb.z1, &emb.z2, block_rows)?;
    let (nca, grad_k) = nca_loss_with_grad(&pairwise.matrix, adj, eta)?;
    let (nca_z1, nca_z2) = pairwise.backward(&grad_k);

    let (afc, grad_s) = afc_loss_with_grad(&cos.s, h)?;
    let (afc_z1, afc_z2) = cos.backward(&grad_s);

    let grad_z1 = nca_z1 + &(afc_z1 * lambda1) + &(gda.grad_z1 * lambda2);
    let grad_z2 = nca_z2 + &(afc_z2 * lambda1) + &(gda.grad_z2 * lambda2);
    let losses = LossBreakdown {
        nca,
        afc,
        gda: gda.loss,
        total: total_loss(nca, afc, gda.loss, lambda1, lambda2),
    };
    Ok((losses, grad_z1, grad_z2))
}

/// Pairwise divergence matrix for the current embeddings (diagnostic use).
pub fn divergence_matrix(emb: &EmbeddingPair, block_rows: usize) -> Result<SklMatrix> {
    PairwiseSkl::forward(&emb.z1, &emb.z2, block_rows).map(|p| p.matrix)
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(epoch as u64)
}

/// Runs training without a per-epoch observer.
pub fn train(g: &AttributedGraph, cfg: &TrainConfig) -> Result<TrainResult> {
    train_with_observer(g, cfg, |_| {})
}

/// Runs training and hands every finished epoch record to `observer`.
pub fn train_with_observer(
    g: &AttributedGraph,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&EpochRecord),
) -> Result<TrainResult> {
    cfg.validate()?;
    let n = g.n_nodes();
    if n < 2 {
        return Err(Error::Degenerate(
            "training needs at least two nodes".into(),
        ));
    }
    let n_clusters = cfg
        .n_clusters
        .or(g.n_classes())
        .ok_or_else(|| Error::Parameter("cluster count unknown: set n_clusters".into()))?;
    let adj = g.adjacency();
    let labels = g.labels();
    let x = preprocess(g.attributes(), cfg.preprocessing);

    let mut enc = init_encoders(g.n_features(), &cfg.encoder, cfg.seed)?;
    let mut opt = Adam::new(cfg.learning_rate);

    if adj.n_edges() == 0 && cfg.eta_override.is_none() {
        log::warn!("graph has no edges; neutral contrastive factor fixed at 0");
    }

    let input_diagnostics = labels.and_then(|y| diagnostics_of(adj, y).ok());
    let mut per_epoch = Vec::with_capacity(cfg.epochs);
    let mut best_epoch: Option<(usize, MetricsReport)> = None;
    let mut clusters = None;
    let mut best_total = f64::INFINITY;
    let mut stale = 0usize;

    for epoch in 0..cfg.epochs {
        let (emb, cache) = enc.forward(&x)?;
        let cos = CosineSimilarity::forward(&emb.z1, &emb.z2)?;
        let norm_s = minmax_normalize_scoped(&cos.s, cfg.norm_scope);
        let xi = similarity_threshold(&norm_s)?;
        let eta = match cfg.eta_override {
            Some(eta) => eta,
            None => match neutral_contrastive_factor(&norm_s, adj, xi) {
                Ok(eta) => eta,
                Err(Error::Degenerate(_)) => 0.0,
                Err(e) => return Err(e),
            },
        };

        if epoch % cfg.kmeans_interval == 0 || clusters.is_none() {
            clusters = Some(kmeans_with(
                &emb.fused,
                n_clusters,
                epoch_seed(cfg.seed, epoch),
                &cfg.kmeans,
            )?);
        }
        let km = clusters.as_ref().expect("set above");
        let hc = select_high_confidence(
            &emb.fused,
            &km.assignments,
            &km.centroids,
            cfg.k,
            cfg.selection_scope,
        )?;
        let h = build_high_confidence_graph(&hc, adj, &norm_s)?;

        let (losses, g1, g2) = assemble(
            &emb,
            &cos,
            adj,
            eta,
            &h,
            cfg.lambda1,
            cfg.lambda2,
            cfg.block_rows,
        )?;
        if !losses.is_finite() {
            return Err(Error::NonFinite {
                epoch,
                message: format!(
                    "nca={} afc={} gda={} total={} eta={eta} xi={xi}",
                    losses.nca, losses.afc, losses.gda, losses.total
                ),
            });
        }

        let (hc_homophily, hc_congener, metrics) = match labels {
            Some(y) => {
                let diag = run_diagnostics(&h, y).ok();
                let metrics = evaluate(&km.assignments, y)?;
                (
                    diag.map(|d| d.homophily_ratio),
                    diag.map(|d| d.congener_ratio),
                    Some(metrics),
                )
            }
            None => (None, None, None),
        };
        if let Some(m) = metrics {
            if best_epoch.is_none_or(|(_, b)| m.acc > b.acc) {
                best_epoch = Some((epoch, m));
            }
        }

        let record = EpochRecord {
            epoch,
            l_nca: losses.nca,
            l_afc: losses.afc,
            l_gda: losses.gda,
            l_total: losses.total,
            eta,
            xi,
            hc_support: h.n_support_entries(),
            hc_homophily,
            hc_congener,
            metrics,
        };
        observer(&record);
        per_epoch.push(record);

        let grads = enc.backward(&cache, &g1, &g2);
        opt.step(enc.param_slices_mut(), grads.slices());

        if let Some(stop) = &cfg.early_stop {
            if losses.total < best_total - stop.rel_tol * best_total.abs() {
                best_total = losses.total;
                stale = 0;
            } else {
                stale += 1;
                if stale >= stop.patience {
                    log::info!("early stop after epoch {epoch}");
                    break;
                }
            }
        }
    }

    let emb = enc.forward(&x)?.0;
    let final_clusters = kmeans_with(
        &emb.fused,
        n_clusters,
        epoch_seed(cfg.seed, per_epoch.len()),
        &cfg.kmeans,
    )?;
    let final_metrics = labels
        .map(|y| evaluate(&final_clusters.assignments, y))
        .transpose()?;

    Ok(TrainResult {
        per_epoch,
        final_assignments: final_clusters.assignments,
        final_metrics,
        best_epoch,
        input_diagnostics,
        encoder: enc,
    })
}
