//! Run reports and their serialized forms: `report.json` holds everything
//! needed to regenerate the CSV outputs byte-identically.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, Method};
use crate::error::Result;
use crate::eval::{BinnedCurve, IntervalMetrics};
use crate::model_io::{CalibrationArtifact, FORMAT_VERSION};
use crate::serde_ext;

/// Per-method results of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub metrics: IntervalMetrics,
    /// Total mean absolute deviation of the interval triple from the
    /// analytic oracle quantiles (synthetic sources only).
    #[serde(default, with = "serde_ext::opt_extended")]
    pub mad_vs_oracle: Option<f64>,
    pub calibration: CalibrationArtifact,
    /// Coverage across the signal index (synthetic sources only).
    pub index_curve: Option<BinnedCurve>,
    /// Coverage binned by the conformal method's interval lengths.
    pub length_curve: Option<BinnedCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateReport {
    pub replicate: usize,
    pub seed: u64,
    pub methods: Vec<MethodReport>,
}

/// Mean and spread of every metric across replicates for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    pub mean: MetricVector,
    pub std: MetricVector,
}

/// The aggregatable metric fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    #[serde(with = "serde_ext::extended")]
    pub ave_coverage: f64,
    #[serde(with = "serde_ext::extended")]
    pub ave_length: f64,
    #[serde(with = "serde_ext::extended")]
    pub iqr_length: f64,
    #[serde(with = "serde_ext::extended")]
    pub mad: f64,
    #[serde(default, with = "serde_ext::opt_extended")]
    pub mad_vs_oracle: Option<f64>,
}

/// The full run record: config echo, seeds, per-replicate results, and
/// cross-replicate aggregates. Fully reproducible from config + seed (the
/// wall clock is provenance, not part of the reproducible surface).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format_version: u32,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub master_seed: u64,
    pub replicate_seeds: Vec<u64>,
    pub wall_clock_seconds: f64,
    pub replicates: Vec<ReplicateReport>,
    pub aggregate: Vec<AggregateRow>,
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl RunReport {
    pub fn assemble(
        config: ExperimentConfig,
        replicate_seeds: Vec<u64>,
        replicates: Vec<ReplicateReport>,
        wall_clock_seconds: f64,
    ) -> Self {
        let mut aggregate = Vec::new();
        for &method in &config.methods {
            let rows: Vec<&MethodReport> = replicates
                .iter()
                .filter_map(|r| r.methods.iter().find(|m| m.method == method))
                .collect();
            if rows.is_empty() {
                continue;
            }
            let collect = |f: &dyn Fn(&MethodReport) -> f64| -> (f64, f64) {
                mean_and_std(&rows.iter().map(|r| f(r)).collect::<Vec<f64>>())
            };
            let (cov_m, cov_s) = collect(&|r| r.metrics.ave_coverage);
            let (len_m, len_s) = collect(&|r| r.metrics.ave_length);
            let (iqr_m, iqr_s) = collect(&|r| r.metrics.iqr_length);
            let (mad_m, mad_s) = collect(&|r| r.metrics.mad);
            let oracle = rows.iter().all(|r| r.mad_vs_oracle.is_some());
            let (orc_m, orc_s) = if oracle {
                let (m, s) = mean_and_std(
                    &rows
                        .iter()
                        .map(|r| r.mad_vs_oracle.unwrap())
                        .collect::<Vec<_>>(),
                );
                (Some(m), Some(s))
            } else {
                (None, None)
            };
            aggregate.push(AggregateRow {
                method,
                mean: MetricVector {
                    ave_coverage: cov_m,
                    ave_length: len_m,
                    iqr_length: iqr_m,
                    mad: mad_m,
                    mad_vs_oracle: orc_m,
                },
                std: MetricVector {
                    ave_coverage: cov_s,
                    ave_length: len_s,
                    iqr_length: iqr_s,
                    mad: mad_s,
                    mad_vs_oracle: orc_s,
                },
            });
        }
        let config_hash = config.hash();
        let master_seed = config.seed;
        Self {
            format_version: FORMAT_VERSION,
            config,
            config_hash,
            master_seed,
            replicate_seeds,
            replicates,
            aggregate,
            wall_clock_seconds,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let report: RunReport = serde_json::from_str(&fs::read_to_string(path)?)?;
        if report.format_version != FORMAT_VERSION {
            return Err(crate::error::Error::FormatVersion {
                artifact: "report",
                expected: FORMAT_VERSION,
                found: report.format_version,
            });
        }
        Ok(report)
    }
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

fn calibration_columns(cal: &CalibrationArtifact) -> (String, String, String) {
    match cal {
        CalibrationArtifact::ConfNn(c) => (fmt(c.c_hat), String::new(), String::new()),
        CalibrationArtifact::Pav(s) => (String::new(), fmt(s.tau_hat), String::new()),
        CalibrationArtifact::ConfFw(c) => (String::new(), String::new(), fmt(c.half_width)),
        CalibrationArtifact::None {} => (String::new(), String::new(), String::new()),
    }
}

/// One row per (replicate, method) plus `mean`/`std` aggregate rows.
pub fn write_metrics_csv(report: &RunReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "format_version",
        "replicate",
        "method",
        "ave_coverage",
        "ave_length",
        "iqr_length",
        "mad",
        "mad_vs_oracle",
        "c_hat",
        "tau_hat",
        "half_width",
    ])?;
    let version = report.format_version.to_string();
    for rep in &report.replicates {
        for m in &rep.methods {
            let (c_hat, tau_hat, half_width) = calibration_columns(&m.calibration);
            w.write_record([
                version.clone(),
                rep.replicate.to_string(),
                m.method.name().to_string(),
                fmt(m.metrics.ave_coverage),
                fmt(m.metrics.ave_length),
                fmt(m.metrics.iqr_length),
                fmt(m.metrics.mad),
                fmt_opt(m.mad_vs_oracle),
                c_hat,
                tau_hat,
                half_width,
            ])?;
        }
    }
    for row in &report.aggregate {
        for (label, v) in [("mean", &row.mean), ("std", &row.std)] {
            w.write_record([
                version.clone(),
                label.to_string(),
                row.method.name().to_string(),
                fmt(v.ave_coverage),
                fmt(v.ave_length),
                fmt(v.iqr_length),
                fmt(v.mad),
                fmt_opt(v.mad_vs_oracle),
                String::new(),
                String::new(),
                String::new(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_curve_rows(
    w: &mut csv::Writer<fs::File>,
    version: &str,
    replicate: usize,
    kind: &str,
    curve: &BinnedCurve,
) -> Result<()> {
    for (i, center) in curve.centers.iter().enumerate() {
        w.write_record([
            version.to_string(),
            replicate.to_string(),
            kind.to_string(),
            i.to_string(),
            fmt(*center),
            fmt(curve.coverage[i]),
            fmt(curve.mass[i]),
            curve.unreliable[i].to_string(),
            curve.smoothing_window.to_string(),
        ])?;
    }
    Ok(())
}

/// One file per method under `curves/`, one row per bin.
pub fn write_curves(report: &RunReport, dir: &Path) -> Result<()> {
    let curves_dir = dir.join("curves");
    fs::create_dir_all(&curves_dir)?;
    let version = report.format_version.to_string();
    for &method in &report.config.methods {
        let has_any = report.replicates.iter().any(|r| {
            r.methods.iter().any(|m| {
                m.method == method && (m.index_curve.is_some() || m.length_curve.is_some())
            })
        });
        if !has_any {
            continue;
        }
        let mut w = csv::Writer::from_path(curves_dir.join(format!("{}.csv", method.name())))?;
        w.write_record([
            "format_version",
            "replicate",
            "curve",
            "bin",
            "bin_center",
            "coverage",
            "mass",
            "unreliable",
            "smoothing_window",
        ])?;
        for rep in &report.replicates {
            if let Some(m) = rep.methods.iter().find(|m| m.method == method) {
                if let Some(curve) = &m.index_curve {
                    write_curve_rows(&mut w, &version, rep.replicate, "by-index", curve)?;
                }
                if let Some(curve) = &m.length_curve {
                    write_curve_rows(&mut w, &version, rep.replicate, "by-length", curve)?;
                }
            }
        }
        w.flush()?;
    }
    Ok(())
}

/// Write `report.json`, `metrics.csv`, and `curves/<method>.csv` under
/// `dir`.
pub fn write_report_files(report: &RunReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    report.save(&dir.join("report.json"))?;
    write_metrics_csv(report, &dir.join("metrics.csv"))?;
    write_curves(report, dir)?;
    Ok(())
}
