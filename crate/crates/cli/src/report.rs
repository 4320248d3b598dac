use anyhow::Context;
use neucgc::{EpochRecord, MetricsReport, TrainResult};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

pub const CURVE_HEADER: &str = "epoch,l_nca,l_afc,l_gda,l_total,eta,xi,acc,nmi,ari,f1";
pub const DIAGNOSTIC_HEADER: &str = "epoch,hc_support,r_h_h,delta_h,r_h_a,delta_a";
pub const SUMMARY_HEADER: &str = "ACC\tNMI\tARI\tF1";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn create(path: &Path) -> anyhow::Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

/// Appends one JSON object per line.
pub struct EpochLog {
    out: BufWriter<fs::File>,
}

impl EpochLog {
    pub fn create(path: &Path) -> anyhow::Result<Self> {
        Ok(Self { out: create(path)? })
    }

    pub fn push(&mut self, r: &EpochRecord) -> anyhow::Result<()> {
        serde_json::to_writer(&mut self.out, r)?;
        writeln!(self.out)?;
        Ok(())
    }

    pub fn finish(mut self) -> anyhow::Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Loss and metric curves, one row per epoch.
pub fn curves_csv(records: &[EpochRecord]) -> String {
    let mut s = format!("{CURVE_HEADER}\n");
    for r in records {
        let m = r
            .metrics
            .map(|m| m.as_array().map(Some))
            .unwrap_or([None; 4]);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.epoch,
            r.l_nca,
            r.l_afc,
            r.l_gda,
            r.l_total,
            r.eta,
            r.xi,
            opt(m[0]),
            opt(m[1]),
            opt(m[2]),
            opt(m[3])
        );
    }
    s
}

/// Homophily and congener ratio of the high-confidence graph per epoch,
/// next to the constant values of the input graph.
pub fn diagnostics_csv(result: &TrainResult) -> String {
    let base = result.input_diagnostics;
    let mut s = format!("{DIAGNOSTIC_HEADER}\n");
    for r in &result.per_epoch {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.epoch,
            r.hc_support,
            opt(r.hc_homophily),
            opt(r.hc_congener),
            opt(base.map(|b| b.homophily_ratio)),
            opt(base.map(|b| b.congener_ratio))
        );
    }
    s
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `mean±std` per metric in percent, tab-separated.
pub fn summary_row(metrics: &[MetricsReport]) -> String {
    (0..4)
        .map(|i| {
            let column: Vec<f64> = metrics.iter().map(|m| 100.0 * m.as_array()[i]).collect();
            let (mean, std) = mean_std(&column);
            format!("{mean:.1}±{std:.1}")
        })
        .collect::<Vec<_>>()
        .join("\t")
}

pub fn assignments_txt(assignments: &[usize]) -> String {
    let mut s = String::with_capacity(assignments.len() * 3);
    for a in assignments {
        let _ = writeln!(s, "{a}");
    }
    s
}
