mod report;
mod spec;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use neucgc::encoder::save_checkpoint;
use neucgc::{
    generate_sbm, load_graph, train_with_observer, write_graph, AttributedGraph, GraphStats,
    SbmParams,
};
use report::EpochLog;
use serde::Serialize;
use spec::{ExperimentSpec, RunSettings};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "neucgc",
    version,
    about = "Neutral contrastive graph clustering"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print node, edge, class and attribute counts with homophily statistics.
    Stats {
        /// Graph directories (features.txt, edges.txt, labels.txt).
        #[arg(required = true)]
        data: Vec<PathBuf>,
        /// Also write the table here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a planted-partition graph with Gaussian class features.
    Sbm {
        #[arg(long, default_value_t = 300)]
        nodes: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 0.1)]
        p_in: f64,
        #[arg(long, default_value_t = 0.005)]
        p_out: f64,
        #[arg(long, default_value_t = 32)]
        features: usize,
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and cluster, once per seed.
    Train {
        #[arg(long, required_unless_present = "spec")]
        data: Option<PathBuf>,
        /// Flat TOML file of run settings; flags take precedence.
        #[arg(long, conflicts_with = "spec")]
        config: Option<PathBuf>,
        /// Re-run a resolved spec.json from an earlier run.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[command(flatten)]
        settings: RunSettings,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every cell of a hyper-parameter grid.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        lambda1_grid: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        lambda2_grid: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        k_grid: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        dim_grid: Option<Vec<usize>>,
        #[command(flatten)]
        settings: RunSettings,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
enum Failure {
    Input(anyhow::Error),
    Training(anyhow::Error),
    PartialSweep { failed: usize, total: usize },
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Training(_) => 3,
            Failure::PartialSweep { .. } => 4,
        }
    }
}

trait InputContext<T> {
    fn input(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> InputContext<T> for Result<T, E> {
    fn input(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Input(e.into()))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Stats { data, out } => stats(&data, out.as_deref()),
        Command::Sbm {
            nodes,
            classes,
            p_in,
            p_out,
            features,
            noise,
            seed,
            out,
        } => sbm(
            &SbmParams {
                n_nodes: nodes,
                n_classes: classes,
                p_in,
                p_out,
                feature_dim: features,
                feature_noise: noise,
                seed,
            },
            &out,
        ),
        Command::Train {
            data,
            config,
            spec,
            settings,
            out,
        } => resolve_train(data, config, spec, settings).and_then(|s| run_train(&s, &out)),
        Command::Sweep {
            data,
            config,
            lambda1_grid,
            lambda2_grid,
            k_grid,
            dim_grid,
            settings,
            out,
        } => {
            let grid = Grid {
                lambda1: lambda1_grid,
                lambda2: lambda2_grid,
                k: k_grid,
                dim: dim_grid,
            };
            merged_settings(config.as_deref(), settings).and_then(|s| sweep(&data, &s, &grid, &out))
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Input(e) => eprintln!("input error: {e:#}"),
                Failure::Training(e) => eprintln!("training failed: {e:#}"),
                Failure::PartialSweep { failed, total } => {
                    eprintln!("{failed} of {total} sweep cells failed")
                }
            }
            ExitCode::from(f.code())
        }
    }
}

fn stats(dirs: &[PathBuf], out: Option<&Path>) -> Result<(), Failure> {
    let mut table = format!("Dataset\t{}\n", GraphStats::HEADER.join("\t"));
    for dir in dirs {
        let g = load_graph(dir).input()?;
        let s = GraphStats::compute(&g).input()?;
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        table.push_str(&format!("{name}\t{}\n", s.table_row()));
    }
    print!("{table}");
    if let Some(path) = out {
        fs::write(path, &table)
            .with_context(|| format!("writing {}", path.display()))
            .input()?;
    }
    Ok(())
}

fn sbm(params: &SbmParams, out: &Path) -> Result<(), Failure> {
    let g = generate_sbm(params).input()?;
    write_graph(&g, out).input()?;
    log::info!(
        "wrote {} nodes, {} edges to {}",
        g.n_nodes(),
        g.n_edges(),
        out.display()
    );
    Ok(())
}

fn merged_settings(config: Option<&Path>, flags: RunSettings) -> Result<RunSettings, Failure> {
    let file = match config {
        Some(p) => RunSettings::from_file(p).input()?,
        None => RunSettings::default(),
    };
    Ok(flags.over(file))
}

fn resolve_train(
    data: Option<PathBuf>,
    config: Option<PathBuf>,
    spec: Option<PathBuf>,
    settings: RunSettings,
) -> Result<ExperimentSpec, Failure> {
    if let Some(path) = spec {
        return ExperimentSpec::load(&path).input();
    }
    let data = data.ok_or_else(|| anyhow!("--data is required")).input()?;
    let settings = merged_settings(config.as_deref(), settings)?;
    ExperimentSpec::resolve(data, &settings).input()
}

fn load(data: &Path) -> Result<AttributedGraph, Failure> {
    load_graph(data).input()
}

#[derive(Serialize)]
struct MetricsFile {
    seed: u64,
    final_metrics: Option<neucgc::MetricsReport>,
    best_epoch: Option<usize>,
    best_metrics: Option<neucgc::MetricsReport>,
}

fn run_train(spec: &ExperimentSpec, out: &Path) -> Result<(), Failure> {
    let g = load(&spec.data)?;
    fs::create_dir_all(out).input()?;
    report::write_json(&out.join("spec.json"), spec).input()?;
    let mut finals = Vec::new();
    for &seed in &spec.seeds {
        let dir = out.join(format!("seed-{seed}"));
        fs::create_dir_all(&dir).input()?;
        let mut log = EpochLog::create(&dir.join("log.jsonl")).input()?;
        let mut log_error = None;
        let result = train_with_observer(&g, &spec.config_for(seed), |r| {
            if let Err(e) = log.push(r) {
                log_error.get_or_insert(e);
            }
        })
        .map_err(|e| Failure::Training(e.into()))?;
        if let Some(e) = log_error {
            return Err(Failure::Input(e));
        }
        log.finish().input()?;

        let write = |name: &str, text: String| fs::write(dir.join(name), text).input();
        write("curves.csv", report::curves_csv(&result.per_epoch))?;
        write("diagnostics.csv", report::diagnostics_csv(&result))?;
        write(
            "assignments.txt",
            report::assignments_txt(&result.final_assignments),
        )?;
        report::write_json(
            &dir.join("metrics.json"),
            &MetricsFile {
                seed,
                final_metrics: result.final_metrics.map(|m| m.as_percentages()),
                best_epoch: result.best_epoch.map(|b| b.0),
                best_metrics: result.best_epoch.map(|b| b.1.as_percentages()),
            },
        )
        .input()?;
        save_checkpoint(&result.encoder, dir.join("encoder.bin")).input()?;
        if let Some(m) = result.final_metrics {
            log::info!(
                "seed {seed}: ACC {:.1} NMI {:.1} ARI {:.1} F1 {:.1}",
                100.0 * m.acc,
                100.0 * m.nmi,
                100.0 * m.ari,
                100.0 * m.f1
            );
            finals.push(m);
        }
    }
    if !finals.is_empty() {
        let row = report::summary_row(&finals);
        println!("{}\n{row}", report::SUMMARY_HEADER);
        fs::write(
            out.join("summary.tsv"),
            format!("{}\n{row}\n", report::SUMMARY_HEADER),
        )
        .input()?;
    }
    Ok(())
}

struct Grid {
    lambda1: Option<Vec<f64>>,
    lambda2: Option<Vec<f64>>,
    k: Option<Vec<f64>>,
    dim: Option<Vec<usize>>,
}

#[derive(Serialize)]
struct SweepSpec<'a> {
    base: &'a ExperimentSpec,
    lambda1: &'a [f64],
    lambda2: &'a [f64],
    k: &'a [f64],
    dim: &'a [usize],
}

const SWEEP_HEADER: &str = "lambda1\tlambda2\tk\tdim\tseed\tstatus\tacc\tnmi\tari\tf1";

fn sweep(data: &Path, settings: &RunSettings, grid: &Grid, out: &Path) -> Result<(), Failure> {
    let base = ExperimentSpec::resolve(data.to_path_buf(), settings).input()?;
    let axis = |g: &Option<Vec<f64>>, d: f64| g.clone().unwrap_or_else(|| vec![d]);
    let l1 = axis(&grid.lambda1, base.config.lambda1);
    let l2 = axis(&grid.lambda2, base.config.lambda2);
    let ks = axis(&grid.k, base.config.k);
    let dims = grid
        .dim
        .clone()
        .unwrap_or_else(|| vec![base.config.encoder.latent_dim]);
    let g = load(data)?;
    fs::create_dir_all(out).input()?;
    report::write_json(
        &out.join("spec.json"),
        &SweepSpec {
            base: &base,
            lambda1: &l1,
            lambda2: &l2,
            k: &ks,
            dim: &dims,
        },
    )
    .input()?;

    let mut table = format!("{SWEEP_HEADER}\n");
    let (mut failed, mut total) = (0, 0);
    for &a in &l1 {
        for &b in &l2 {
            for &k in &ks {
                for &d in &dims {
                    for &seed in &base.seeds {
                        total += 1;
                        let mut cfg = base.config_for(seed);
                        cfg.lambda1 = a;
                        cfg.lambda2 = b;
                        cfg.k = k;
                        cfg.encoder.latent_dim = d;
                        let cell = format!("{a}\t{b}\t{k}\t{d}\t{seed}");
                        match neucgc::train(&g, &cfg) {
                            Ok(r) => {
                                let m = r
                                    .final_metrics
                                    .map(|m| m.as_array().map(|v| format!("{:.1}", 100.0 * v)));
                                let cols =
                                    m.map(|m| m.join("\t")).unwrap_or_else(|| "\t\t\t".into());
                                table.push_str(&format!("{cell}\tok\t{cols}\n"));
                            }
                            Err(e) => {
                                failed += 1;
                                log::warn!("cell {cell:?} failed: {e}");
                                table.push_str(&format!("{cell}\tfailed\t\t\t\t\n"));
                            }
                        }
                    }
                }
            }
        }
    }
    fs::write(out.join("sweep.tsv"), &table).input()?;
    print!("{table}");
    if failed > 0 {
        return Err(Failure::PartialSweep { failed, total });
    }
    Ok(())
}
