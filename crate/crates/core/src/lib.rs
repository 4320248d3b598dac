//! Homophily-aware neutral contrastive graph clustering.
//!
//! Two unshared MLP encoders map node attributes to two views. Training
//! minimizes a neighborhood alignment loss over pairwise cross-view SKL
//! divergences (neighbors weighted by an estimated neutral contrastive
//! factor), a feature-consistency contrastive loss over a per-epoch
//! high-confidence graph, and a global distribution alignment loss. Final
//! clusters come from K-means on the concatenated views.

pub mod afc;
pub mod cluster;
pub mod contrast;
pub mod distributions;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod optim;
pub mod train;

pub use afc::{
    afc_loss, build_high_confidence_graph, infonce_bound, select_high_confidence,
    HighConfidenceGraph, HighConfidenceSet, SelectionScope,
};
pub use cluster::{evaluate, kmeans, kmeans_with, ClusterResult, KMeansConfig, MetricsReport};
pub use contrast::{
    cross_view_similarity, minmax_normalize, nca_loss, neutral_contrastive_factor,
    similarity_threshold, NormScope, SimilarityState,
};
pub use distributions::{
    gda_loss, node_distribution, pairwise_skl_matrix, skl_divergence, ProbVector, SklMatrix,
};
pub use encoder::{
    encode, fuse, init_encoders, EmbeddingPair, EncoderConfig, EncoderPair, Preprocessing,
};
pub use error::{Error, Result};
pub use graph::{
    congener_ratio, generate_sbm, homophily_ratio, load_graph, neighborhood_homophily_ratio,
    write_graph, Adjacency, AttributedGraph, GraphStats, SbmParams,
};
pub use train::{
    run_diagnostics, total_loss, train, train_with_observer, EpochRecord, TrainConfig, TrainResult,
};
