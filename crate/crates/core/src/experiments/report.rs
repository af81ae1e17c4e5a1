use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::ExperimentConfig;
use crate::networks::Arch;

/// One (architecture, grid point, seed) result. Fields that do not apply to
/// an experiment are left empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub arch: Arch,
    #[serde(rename = "L")]
    pub depth: usize,
    pub m: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "P")]
    pub params: usize,
    pub seed: u64,
    pub config_hash: String,
    pub metric: String,
    pub value: Option<f64>,
    pub value_db: Option<f64>,
    pub lambda_max: Option<f64>,
    pub ub_value: Option<f64>,
    pub train_mse: Option<f64>,
    pub q_inf: Option<f64>,
    pub epochs_run: Option<usize>,
    pub epochs_to_target: Option<usize>,
    pub stop: Option<String>,
    pub error: Option<String>,
}

impl Cell {
    pub fn key(&self) -> (Arch, usize, usize, usize, u64) {
        (self.arch, self.depth, self.m, self.t, self.seed)
    }

    pub fn failed(arch: Arch, depth: usize, m: usize, t: usize, params: usize, seed: u64, hash: &str, metric: &str, err: String) -> Self {
        Cell {
            arch,
            depth,
            m,
            t,
            params,
            seed,
            config_hash: hash.to_string(),
            metric: metric.to_string(),
            value: None,
            value_db: None,
            lambda_max: None,
            ub_value: None,
            train_mse: None,
            q_inf: None,
            epochs_run: None,
            epochs_to_target: None,
            stop: None,
            error: Some(err),
        }
    }
}

/// Mean and sample standard deviation of `value` over the seeds of one
/// grid point; failed cells are counted but excluded from the statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub arch: Arch,
    #[serde(rename = "L")]
    pub depth: usize,
    pub m: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "P")]
    pub params: usize,
    pub metric: String,
    pub count: usize,
    pub failed: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub seeds: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub git: Option<String>,
    pub timestamp: u64,
}

impl Provenance {
    pub fn capture() -> Self {
        let git = std::process::Command::new("git")
            .args(["rev-parse", "--short", "HEAD"])
            .output()
            .ok()
            .filter(|o| o.status.success())
            .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string());
        Provenance {
            version: env!("CARGO_PKG_VERSION").to_string(),
            git,
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub kind: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub provenance: Provenance,
    pub cells: Vec<Cell>,
    pub aggregates: Vec<Aggregate>,
    /// Experiment-specific conclusions (thresholds, slopes, orderings).
    pub summary: Value,
}

impl Report {
    pub fn new(config: &ExperimentConfig, mut cells: Vec<Cell>, summary: Value) -> Self {
        cells.sort_by(|a, b| a.key().cmp(&b.key()));
        let aggregates = aggregate(&cells);
        Report {
            kind: config.kind.name().to_string(),
            config: config.clone(),
            config_hash: config.hash(),
            provenance: Provenance::capture(),
            cells,
            aggregates,
            summary,
        }
    }

    pub fn aggregate_for(&self, arch: Arch, depth: usize, m: usize, t: usize) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| (a.arch, a.depth, a.m, a.t) == (arch, depth, m, t))
    }
}

pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(std))
}

/// Groups sorted cells by `(arch, L, m, T)`.
pub fn aggregate(cells: &[Cell]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(Arch, usize, usize, usize), Vec<&Cell>> = BTreeMap::new();
    for c in cells {
        groups.entry((c.arch, c.depth, c.m, c.t)).or_default().push(c);
    }
    groups
        .into_iter()
        .map(|((arch, depth, m, t), group)| {
            let values: Vec<f64> = group.iter().filter_map(|c| c.value).collect();
            let (mean, std) = mean_std(&values);
            Aggregate {
                arch,
                depth,
                m,
                t,
                params: group[0].params,
                metric: group[0].metric.clone(),
                count: group.len(),
                failed: group.len() - values.len(),
                mean,
                std,
                seeds: group.iter().map(|c| c.seed.to_string()).collect::<Vec<_>>().join(" "),
            }
        })
        .collect()
}
