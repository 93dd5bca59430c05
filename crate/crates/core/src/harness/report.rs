use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::{ExperimentConfig, ModelKind};
use super::models::LatencyStats;

/// Mean and sample standard deviation (`n − 1` denominator; 0 when `n < 2`).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One trained-and-evaluated model instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub model: ModelKind,
    pub noise_level: f64,
    pub seed_index: usize,
    pub seed: u64,
    /// Test accuracy; `None` when the cell failed.
    pub test_acc: Option<f64>,
    pub param_count: Option<usize>,
    pub error: Option<String>,
}

/// Mean ± std over the successful seeds of one (model, noise level).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub model: ModelKind,
    pub noise_level: f64,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub n_seeds: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRecord {
    pub model: ModelKind,
    pub param_count: usize,
    #[serde(flatten)]
    pub stats: LatencyStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    /// Regime name, or `real`.
    pub regime: String,
    pub cells: Vec<CellResult>,
    pub aggregates: Vec<Aggregate>,
    #[serde(default)]
    pub latency: Vec<LatencyRecord>,
    /// Student parameters over teacher parameters, when both were trained.
    #[serde(default)]
    pub param_ratio: Option<f64>,
}

impl ExperimentReport {
    pub fn aggregate(&self, model: ModelKind, noise_level: f64) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.model == model && a.noise_level == noise_level)
    }

    /// Mean accuracy per grid value for one model, in grid order.
    pub fn curve(&self, model: ModelKind) -> Vec<(f64, f64)> {
        self.aggregates
            .iter()
            .filter(|a| a.model == model)
            .map(|a| (a.noise_level, a.mean_acc))
            .collect()
    }

    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.test_acc.is_none()).count()
    }

    pub fn latency_of(&self, model: ModelKind) -> Option<&LatencyRecord> {
        self.latency.iter().find(|l| l.model == model)
    }
}

/// Groups cells by (model, noise level) in order of first appearance.
pub fn aggregate(cells: &[CellResult]) -> Vec<Aggregate> {
    let mut keys: Vec<(ModelKind, f64)> = Vec::new();
    for c in cells {
        if !keys
            .iter()
            .any(|&(m, v)| m == c.model && v == c.noise_level)
        {
            keys.push((c.model, c.noise_level));
        }
    }
    keys.into_iter()
        .map(|(model, noise_level)| {
            let group: Vec<&CellResult> = cells
                .iter()
                .filter(|c| c.model == model && c.noise_level == noise_level)
                .collect();
            let accs: Vec<f64> = group.iter().filter_map(|c| c.test_acc).collect();
            let (mean_acc, std_acc) = mean_std(&accs);
            Aggregate {
                model,
                noise_level,
                mean_acc,
                std_acc,
                n_seeds: accs.len(),
                n_failed: group.len() - accs.len(),
            }
        })
        .collect()
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Writes `summary.csv`, `cells.csv`, `fig4_<regime>.csv` and `report.json`.
pub fn emit_report(report: &ExperimentReport, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut w = csv::Writer::from_path(out_dir.join("summary.csv"))?;
    w.write_record([
        "model",
        "regime",
        "noise_level",
        "mean_acc",
        "std_acc",
        "n_seeds",
        "n_failed",
    ])?;
    for a in &report.aggregates {
        w.write_record([
            a.model.name().to_owned(),
            report.regime.clone(),
            a.noise_level.to_string(),
            a.mean_acc.to_string(),
            a.std_acc.to_string(),
            a.n_seeds.to_string(),
            a.n_failed.to_string(),
        ])?;
    }
    w.flush()
        .map_err(|e| Error::io(out_dir.join("summary.csv"), e))?;

    let mut w = csv::Writer::from_path(out_dir.join("cells.csv"))?;
    w.write_record([
        "model",
        "regime",
        "noise_level",
        "seed_index",
        "seed",
        "test_acc",
        "param_count",
        "error",
    ])?;
    for c in &report.cells {
        w.write_record([
            c.model.name().to_owned(),
            report.regime.clone(),
            c.noise_level.to_string(),
            c.seed_index.to_string(),
            c.seed.to_string(),
            opt(c.test_acc),
            opt(c.param_count),
            c.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()
        .map_err(|e| Error::io(out_dir.join("cells.csv"), e))?;

    let fig = out_dir.join(format!("fig4_{}.csv", report.regime));
    let mut models: Vec<ModelKind> = report.aggregates.iter().map(|a| a.model).collect();
    models.sort();
    models.dedup();
    let mut grid: Vec<f64> = Vec::new();
    for a in &report.aggregates {
        if !grid.contains(&a.noise_level) {
            grid.push(a.noise_level);
        }
    }
    let mut w = csv::Writer::from_path(&fig)?;
    let mut header = vec!["noise_level".to_owned()];
    for m in &models {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    w.write_record(&header)?;
    for &v in &grid {
        let mut row = vec![v.to_string()];
        for &m in &models {
            let a = report.aggregate(m, v);
            row.push(opt(a.map(|a| a.mean_acc)));
            row.push(opt(a.map(|a| a.std_acc)));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(&fig, e))?;

    let json = out_dir.join("report.json");
    let text = serde_json::to_string_pretty(report)?;
    fs::write(&json, text).map_err(|e| Error::io(&json, e))
}

pub fn load_report(path: &Path) -> Result<ExperimentReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
