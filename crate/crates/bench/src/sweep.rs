//! Sweeps over guidance scale, consistency weight or method.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, Context, Result};

use crate::config::{ExperimentConfig, Method, SweepAxis};
use crate::metrics::MetricRow;
use crate::run::{load_model, manifest_text, run_edits, write_file};
use crate::stats::{mean, std};
use crate::svg::{line_plot, Series};

/// Column order of `sweep.csv`.
pub const SWEEP_COLUMNS: [&str; 16] = [
    "axis",
    "value",
    "n",
    "preserve_mse_mean",
    "preserve_mse_std",
    "preserve_psnr_mean",
    "preserve_psnr_std",
    "edit_dist_mean",
    "edit_dist_std",
    "hit_rate",
    "hit_std",
    "target_log_density_mean",
    "target_log_density_std",
    "roundtrip_mse_mean",
    "roundtrip_mse_std",
    "nfe_mean",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: String,
    pub n: usize,
    /// `(mean, std)` per metric.
    pub preserve_mse: (f64, f64),
    pub preserve_psnr: (f64, f64),
    pub edit_dist: (f64, f64),
    pub hit: (f64, f64),
    pub target_log_density: (f64, f64),
    pub roundtrip_mse: (f64, f64),
    pub nfe: f64,
}

pub fn apply_axis(cfg: &ExperimentConfig, axis: SweepAxis, value: &str) -> Result<ExperimentConfig> {
    let mut c = cfg.clone();
    let num = || value.parse::<f64>().map_err(|e| anyhow!("bad sweep value {value:?}: {e}"));
    match axis {
        SweepAxis::Omega => c.edit.omega = num()?,
        SweepAxis::Zeta => c.edit.zeta = num()?,
        SweepAxis::Method => c.edit.method = Method::parse(value)?,
    }
    c.validate()?;
    Ok(c)
}

pub fn aggregate(value: &str, rows: &[MetricRow]) -> SweepPoint {
    let col = |f: fn(&MetricRow) -> f64| {
        let v: Vec<f64> = rows.iter().map(f).collect();
        (mean(&v), std(&v))
    };
    SweepPoint {
        value: value.to_string(),
        n: rows.len(),
        preserve_mse: col(|r| r.preserve_mse),
        preserve_psnr: col(|r| r.preserve_psnr),
        edit_dist: col(|r| r.edit_dist),
        hit: col(|r| r.target_hit as f64),
        target_log_density: col(|r| r.target_log_density),
        roundtrip_mse: col(|r| r.roundtrip_mse),
        nfe: col(|r| r.nfe as f64).0,
    }
}

/// Runs every axis point and aggregates over tasks and seeds.
pub fn sweep_points(cfg: &ExperimentConfig) -> Result<Vec<SweepPoint>> {
    let mix = cfg.mixture()?;
    let model = load_model(cfg, &mix)?;
    cfg.sweep
        .values
        .iter()
        .map(|v| {
            let c = apply_axis(cfg, cfg.sweep.axis, v)?;
            let rows: Vec<MetricRow> = run_edits(&c, &mix, &model)?.into_iter().map(|o| o.row).collect();
            Ok(aggregate(v, &rows))
        })
        .collect()
}

pub fn sweep_csv(axis: SweepAxis, points: &[SweepPoint]) -> String {
    let mut out = SWEEP_COLUMNS.join(",");
    out.push('\n');
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            axis.name(),
            p.value,
            p.n,
            p.preserve_mse.0,
            p.preserve_mse.1,
            p.preserve_psnr.0,
            p.preserve_psnr.1,
            p.edit_dist.0,
            p.edit_dist.1,
            p.hit.0,
            p.hit.1,
            p.target_log_density.0,
            p.target_log_density.1,
            p.roundtrip_mse.0,
            p.roundtrip_mse.1,
            p.nfe
        );
    }
    out
}

/// Semantic proxy (hit rate) against preservation (PSNR), one point per value.
pub fn tradeoff_svg(title: &str, points: &[SweepPoint]) -> String {
    line_plot(
        title,
        "preserve PSNR (dB)",
        "target-mode hit rate",
        &Series {
            x: points.iter().map(|p| p.preserve_psnr.0).collect(),
            y: points.iter().map(|p| p.hit.0).collect(),
            labels: points.iter().map(|p| p.value.clone()).collect(),
        },
    )
}

pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepPoint>> {
    let points = sweep_points(cfg)?;
    let out = &cfg.run.out;
    write_file(&out.join("sweep.csv"), &sweep_csv(cfg.sweep.axis, &points))?;
    write_file(
        &out.join("sweep.svg"),
        &tradeoff_svg(&format!("{} sweep", cfg.sweep.axis.name()), &points),
    )?;
    write_file(&out.join("manifest.txt"), &manifest_text(cfg, "sweep", &[]))?;
    Ok(points)
}

/// Re-plots two numeric columns of a CSV file (comment lines skipped).
pub fn export_plot(csv: &Path, x_col: &str, y_col: &str, label_col: Option<&str>) -> Result<String> {
    let text = std::fs::read_to_string(csv).with_context(|| format!("reading {}", csv.display()))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().ok_or_else(|| anyhow!("empty csv"))?.split(',').collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| anyhow!("column {name:?} not in {}", csv.display()))
    };
    let (xi, yi) = (find(x_col)?, find(y_col)?);
    let li = label_col.map(find).transpose()?;
    let mut s = Series {
        x: vec![],
        y: vec![],
        labels: vec![],
    };
    for l in lines {
        let f: Vec<&str> = l.split(',').collect();
        s.x.push(f[xi].parse()?);
        s.y.push(f[yi].parse()?);
        s.labels.push(li.map_or(String::new(), |i| f[i].to_string()));
    }
    Ok(line_plot(&format!("{y_col} vs {x_col}"), x_col, y_col, &s))
}
