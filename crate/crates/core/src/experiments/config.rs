use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernel::KERNEL_BUDGET;
use crate::networks::Arch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    SweepT,
    SweepEigen,
    ParamEff,
    GenMae,
    HessianScaling,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::SweepT => "sweep-t",
            ExperimentKind::SweepEigen => "sweep-eigen",
            ExperimentKind::ParamEff => "param-eff",
            ExperimentKind::GenMae => "gen-mae",
            ExperimentKind::HessianScaling => "hessian-scaling",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    #[serde(default = "default_snr")]
    pub snr_db: f64,
    #[serde(default = "default_frob")]
    pub frob_target: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
}

fn default_snr() -> f64 {
    10.0
}
fn default_frob() -> f64 {
    10.0
}
fn default_lambda() -> f64 {
    1.0
}

impl Default for ProblemSpec {
    fn default() -> Self {
        Self {
            m: 100,
            n: 20,
            k: 2,
            snr_db: default_snr(),
            frob_target: default_frob(),
            lambda: default_lambda(),
        }
    }
}

/// One architecture in a sweep. `depth`, `eta` and `epochs` fall back to the
/// grid and `[train]` values when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub arch: Arch,
    #[serde(default)]
    pub depth: Option<usize>,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub epochs: Option<usize>,
}

impl ArchSpec {
    pub fn new(arch: Arch, depth: usize, eta: f64, epochs: usize) -> Self {
        Self {
            arch,
            depth: Some(depth),
            eta: Some(eta),
            epochs: Some(epochs),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(default)]
    pub t: Vec<usize>,
    #[serde(default)]
    pub depth: Vec<usize>,
    #[serde(default)]
    pub m: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    /// Training-set size for experiments without a T grid.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Batch size is `max(1, T / batch_divisor)` unless `batch_size` is set.
    #[serde(default = "default_divisor")]
    pub batch_divisor: usize,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default = "default_mse_cut")]
    pub mse_cut: f64,
    /// Stop a run as soon as its MSE reaches `mse_cut`.
    #[serde(default = "default_true")]
    pub early_stop: bool,
    #[serde(default = "default_eval")]
    pub eval_samples: usize,
    /// Evaluate on the training set instead of fresh samples.
    #[serde(default)]
    pub eval_on_train: bool,
}

fn default_samples() -> usize {
    10
}
fn default_eta() -> f64 {
    0.1
}
fn default_epochs() -> usize {
    1000
}
fn default_divisor() -> usize {
    5
}
fn default_record_every() -> usize {
    100
}
fn default_mse_cut() -> f64 {
    1e-3
}
fn default_true() -> bool {
    true
}
fn default_eval() -> usize {
    200
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            samples: default_samples(),
            eta: default_eta(),
            epochs: default_epochs(),
            batch_divisor: default_divisor(),
            batch_size: None,
            record_every: default_record_every(),
            mse_cut: default_mse_cut(),
            early_stop: true,
            eval_samples: default_eval(),
            eval_on_train: false,
        }
    }
}

impl TrainSpec {
    pub fn batch_for(&self, t: usize) -> usize {
        self.batch_size.unwrap_or((t / self.batch_divisor).max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HessianSpec {
    #[serde(default = "default_extra")]
    pub extra_coordinates: usize,
    #[serde(default = "default_iters")]
    pub iters: usize,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
}

fn default_extra() -> usize {
    5
}
fn default_iters() -> usize {
    300
}
fn default_bootstrap() -> usize {
    1000
}

impl Default for HessianSpec {
    fn default() -> Self {
        Self {
            extra_coordinates: default_extra(),
            iters: default_iters(),
            bootstrap: default_bootstrap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Relative paths resolve against the output root.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub problem: ProblemSpec,
    pub archs: Vec<ArchSpec>,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default)]
    pub train: TrainSpec,
    #[serde(default)]
    pub hessian: HessianSpec,
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}
fn default_workers() -> usize {
    1
}

fn field(name: &str, msg: impl Into<String>) -> Error {
    Error::config(name, msg)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let key = msg
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "config".to_string());
            field(&key, msg)
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// SHA-256 of the canonical JSON encoding, minus the fields that do
    /// not affect results (`output`, `workers`).
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.output = None;
        canon.workers = 1;
        let bytes = serde_json::to_vec(&canon).expect("config serialises");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn depths_for(&self, spec: &ArchSpec) -> Vec<usize> {
        match spec.depth {
            Some(d) => vec![d],
            None => self.grid.depth.clone(),
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        if self.grid.m.is_empty() {
            vec![self.problem.m]
        } else {
            self.grid.m.clone()
        }
    }

    pub fn eta_for(&self, spec: &ArchSpec) -> f64 {
        spec.eta.unwrap_or(self.train.eta)
    }

    pub fn epochs_for(&self, spec: &ArchSpec) -> usize {
        spec.epochs.unwrap_or(self.train.epochs)
    }

    /// Field-level checks (`Error::Config`) followed by budget checks
    /// (`Error::Budget`).
    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        if self.seeds.is_empty() {
            return Err(field("seeds", "at least one seed is required"));
        }
        if self.workers == 0 {
            return Err(field("workers", "must be at least 1"));
        }
        if self.archs.is_empty() {
            return Err(field("archs", "at least one architecture is required"));
        }
        if p.n == 0 {
            return Err(field("problem.n", "must be positive"));
        }
        if !(p.lambda >= 0.0) {
            return Err(field("problem.lambda", "must be nonnegative"));
        }
        if !(p.frob_target > 0.0) {
            return Err(field("problem.frob_target", "must be positive"));
        }
        for m in self.widths() {
            if m <= p.n {
                return Err(field(
                    if self.grid.m.is_empty() { "problem.m" } else { "grid.m" },
                    format!("width {m} must exceed n = {}", p.n),
                ));
            }
            if p.k == 0 || p.k > m {
                return Err(field("problem.k", format!("must lie in [1, {m}]")));
            }
        }
        for (i, a) in self.archs.iter().enumerate() {
            if a.depth == Some(0) {
                return Err(field(&format!("archs[{i}].depth"), "must be at least 1"));
            }
            if a.depth.is_none() && self.grid.depth.is_empty() {
                return Err(field(&format!("archs[{i}].depth"), "missing and grid.depth is empty"));
            }
            if let Some(eta) = a.eta {
                if !(eta > 0.0) {
                    return Err(field(&format!("archs[{i}].eta"), "must be positive"));
                }
            }
        }
        if self.grid.depth.contains(&0) {
            return Err(field("grid.depth", "depths must be at least 1"));
        }
        let t = &self.train;
        if !(t.eta > 0.0) {
            return Err(field("train.eta", "must be positive"));
        }
        if t.record_every == 0 {
            return Err(field("train.record_every", "must be at least 1"));
        }
        if t.batch_divisor == 0 {
            return Err(field("train.batch_divisor", "must be at least 1"));
        }
        if !(t.mse_cut > 0.0) {
            return Err(field("train.mse_cut", "must be positive"));
        }
        let sizes: Vec<usize> = match self.kind {
            ExperimentKind::SweepT => {
                if self.grid.t.is_empty() {
                    return Err(field("grid.t", "T grid must be nonempty"));
                }
                self.grid.t.clone()
            }
            _ => vec![t.samples],
        };
        for &size in &sizes {
            let name = if self.kind == ExperimentKind::SweepT { "grid.t" } else { "train.samples" };
            if size == 0 {
                return Err(field(name, "training-set size must be positive"));
            }
            if let Some(b) = t.batch_size {
                if b == 0 || b > size {
                    return Err(field("train.batch_size", format!("must lie in [1, T = {size}], got {b}")));
                }
            }
        }
        match self.kind {
            ExperimentKind::GenMae => {
                if !t.eval_on_train && t.eval_samples == 0 {
                    return Err(field("train.eval_samples", "must be positive"));
                }
            }
            ExperimentKind::HessianScaling => {
                if self.grid.m.len() < 3 {
                    return Err(field("grid.m", "a slope needs at least three widths"));
                }
                if self.hessian.iters < 20 {
                    return Err(field("hessian.iters", "must be at least 20"));
                }
            }
            ExperimentKind::SweepEigen => {
                for m in self.widths() {
                    let side = m * t.samples;
                    if side > KERNEL_BUDGET {
                        return Err(Error::Budget {
                            what: "m*T",
                            value: side,
                            budget: KERNEL_BUDGET,
                        });
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Built-in desk-scale configuration for each experiment.
    pub fn preset(kind: ExperimentKind) -> Self {
        let base = |archs: Vec<ArchSpec>| ExperimentConfig {
            kind,
            seeds: default_seeds(),
            output: Some(PathBuf::from(kind.name())),
            workers: 1,
            problem: ProblemSpec::default(),
            archs,
            grid: Grid::default(),
            train: TrainSpec::default(),
            hessian: HessianSpec::default(),
        };
        match kind {
            ExperimentKind::SweepT => {
                let mut c = base(vec![
                    ArchSpec::new(Arch::Lista, 11, 0.12, 30_000),
                    ArchSpec::new(Arch::Admm, 11, 0.09, 40_000),
                    ArchSpec::new(Arch::Ffnn, 14, 0.04, 40_000),
                ]);
                c.grid.t = vec![10, 20, 40, 60, 80, 100, 120];
                c.train.record_every = 500;
                c
            }
            ExperimentKind::SweepEigen => {
                let mut c = base(
                    Arch::ALL
                        .iter()
                        .map(|&arch| ArchSpec {
                            arch,
                            depth: None,
                            eta: None,
                            epochs: None,
                        })
                        .collect(),
                );
                c.grid.depth = (2..=10).collect();
                c
            }
            ExperimentKind::ParamEff => {
                let mut c = base(vec![
                    ArchSpec::new(Arch::Lista, 6, 0.12, 30_000),
                    ArchSpec::new(Arch::Admm, 6, 0.09, 30_000),
                    ArchSpec::new(Arch::Ffnn, 8, 0.04, 30_000),
                    ArchSpec::new(Arch::Ffnn, 11, 0.04, 30_000),
                ]);
                c.train.samples = 30;
                c.train.early_stop = false;
                c.train.record_every = 250;
                c
            }
            ExperimentKind::GenMae => {
                let mut c = base(vec![
                    ArchSpec::new(Arch::Lista, 11, 0.12, 10_000),
                    ArchSpec::new(Arch::Admm, 11, 0.09, 10_000),
                    ArchSpec::new(Arch::Ffnn, 14, 0.04, 10_000),
                ]);
                c.grid.m = (100..=400).step_by(50).collect();
                c.train.samples = 100;
                c.train.early_stop = false;
                c.train.record_every = 500;
                c
            }
            ExperimentKind::HessianScaling => {
                let mut c = base(
                    Arch::ALL
                        .iter()
                        .map(|&arch| ArchSpec {
                            arch,
                            depth: Some(3),
                            eta: None,
                            epochs: None,
                        })
                        .collect(),
                );
                c.seeds = (0..5).collect();
                c.grid.m = vec![50, 100, 200, 400];
                c
            }
        }
    }
}
