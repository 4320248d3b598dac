use anyhow::{bail, Context};
use neucgc::{NormScope, Preprocessing, SelectionScope, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Flat run settings, read from a TOML file and from command-line flags.
/// Flags win over the file; both win over library defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    /// Latent embedding dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Hidden layers plus output layer per encoder.
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// Fraction of nodes treated as high confidence.
    #[arg(long)]
    pub k: Option<f64>,
    /// First seed; repeats use consecutive seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub repeat: Option<usize>,
    /// Number of clusters (defaults to the label count).
    #[arg(long)]
    pub clusters: Option<usize>,
    /// Fix the neutral contrastive factor instead of estimating it.
    #[arg(long)]
    pub eta: Option<f64>,
    /// none, row-l2 or standardize.
    #[arg(long)]
    pub preprocessing: Option<String>,
    /// global or row.
    #[arg(long)]
    pub norm_scope: Option<String>,
    /// global or per-cluster.
    #[arg(long)]
    pub selection_scope: Option<String>,
    #[arg(long)]
    pub kmeans_interval: Option<usize>,
}

impl RunSettings {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Fields set in `self` override those in `base`.
    pub fn over(self, base: RunSettings) -> RunSettings {
        RunSettings {
            dim: self.dim.or(base.dim),
            depth: self.depth.or(base.depth),
            lr: self.lr.or(base.lr),
            epochs: self.epochs.or(base.epochs),
            lambda1: self.lambda1.or(base.lambda1),
            lambda2: self.lambda2.or(base.lambda2),
            k: self.k.or(base.k),
            seed: self.seed.or(base.seed),
            repeat: self.repeat.or(base.repeat),
            clusters: self.clusters.or(base.clusters),
            eta: self.eta.or(base.eta),
            preprocessing: self.preprocessing.or(base.preprocessing),
            norm_scope: self.norm_scope.or(base.norm_scope),
            selection_scope: self.selection_scope.or(base.selection_scope),
            kmeans_interval: self.kmeans_interval.or(base.kmeans_interval),
        }
    }

    pub fn to_config(&self) -> anyhow::Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        if let Some(v) = self.dim {
            cfg.encoder.latent_dim = v;
        }
        if let Some(v) = self.depth {
            cfg.encoder.depth = v;
        }
        if let Some(v) = self.lr {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.lambda1 {
            cfg.lambda1 = v;
        }
        if let Some(v) = self.lambda2 {
            cfg.lambda2 = v;
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.kmeans_interval {
            cfg.kmeans_interval = v;
        }
        cfg.n_clusters = self.clusters;
        cfg.eta_override = self.eta;
        if let Some(v) = &self.preprocessing {
            cfg.preprocessing = v.parse::<Preprocessing>()?;
        }
        if let Some(v) = &self.norm_scope {
            cfg.norm_scope = v.parse::<NormScope>()?;
        }
        if let Some(v) = &self.selection_scope {
            cfg.selection_scope = v.parse::<SelectionScope>()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Everything needed to reproduce a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub tool_version: String,
    pub data: PathBuf,
    pub seeds: Vec<u64>,
    pub config: TrainConfig,
}

impl ExperimentSpec {
    pub fn resolve(data: PathBuf, settings: &RunSettings) -> anyhow::Result<Self> {
        let config = settings.to_config()?;
        let repeat = settings.repeat.unwrap_or(1);
        if repeat == 0 {
            bail!("repeat must be positive");
        }
        Ok(Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            data,
            seeds: (0..repeat as u64).map(|i| config.seed + i).collect(),
            config,
        })
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn config_for(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.config.clone()
        }
    }
}
