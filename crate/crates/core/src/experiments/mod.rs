//! Experiment driver: sweeps over architectures, grid points and seeds,
//! with a configurable worker pool and reports in a canonical order.

mod config;
mod report;

pub use config::{ArchSpec, ExperimentConfig, ExperimentKind, Grid, HessianSpec, ProblemSpec, TrainSpec};
pub use report::{aggregate, mean_std, Aggregate, Cell, Provenance, Report};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};

use crate::curvature::{self, CurvatureCell, ScalingConfig};
use crate::error::{Error, Result};
use crate::io::{self, Spectrum};
use crate::kernel::{self, KernelBoundInputs, KERNEL_BUDGET};
use crate::networks::{param_count, Arch, InitialState, Network};
use crate::problem::{Dataset, LinearInverseProblem};
use crate::seed::{self, stream};
use crate::training::{self, TrainConfig, TrainRecord};
use crate::SmoothThreshold;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "UNFOLD_OUTPUT_ROOT";

pub fn default_output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| PathBuf::from("results"), PathBuf::from)
}

/// Runs `job` over `items` on a pool of `workers` threads; results come back
/// in input order.
pub fn run_pool<T, R, F>(workers: usize, items: &[T], job: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Contract(format!("worker pool: {e}")))?;
    Ok(pool.install(|| items.par_iter().map(&job).collect()))
}

fn instance(cfg: &ExperimentConfig, m: usize, t: usize, seed_value: u64) -> Result<(LinearInverseProblem<f64>, Dataset<f64>)> {
    let p = &cfg.problem;
    let problem = LinearInverseProblem::generate(p.n, m, p.k, p.snr_db, p.frob_target, seed_value)?;
    let data = problem.gen_dataset(t, seed_value)?;
    Ok((problem, data))
}

fn network(cfg: &ExperimentConfig, arch: Arch, depth: usize, m: usize, seed_value: u64) -> Result<Network<f64>> {
    Network::init_gaussian(arch, depth, m, cfg.problem.n, SmoothThreshold::new(cfg.problem.lambda)?, seed_value)
}

#[derive(Debug, Clone, Copy)]
struct Point {
    spec: usize,
    arch: Arch,
    depth: usize,
    m: usize,
    t: usize,
    seed: u64,
}

impl Point {
    fn params(&self, n: usize) -> usize {
        param_count(self.arch, self.depth, self.m, n)
    }
}

fn points(cfg: &ExperimentConfig) -> Vec<Point> {
    let ts = match cfg.kind {
        ExperimentKind::SweepT => cfg.grid.t.clone(),
        _ => vec![cfg.train.samples],
    };
    let mut out = Vec::new();
    for (i, spec) in cfg.archs.iter().enumerate() {
        for depth in cfg.depths_for(spec) {
            for &m in &cfg.widths() {
                for &t in &ts {
                    for &seed in &cfg.seeds {
                        out.push(Point {
                            spec: i,
                            arch: spec.arch,
                            depth,
                            m,
                            t,
                            seed,
                        });
                    }
                }
            }
        }
    }
    out
}

fn blank(cfg: &ExperimentConfig, p: &Point, metric: &str) -> Cell {
    let mut c = Cell::failed(p.arch, p.depth, p.m, p.t, p.params(cfg.problem.n), p.seed, &cfg.hash(), metric, String::new());
    c.error = None;
    c
}

fn train_config(cfg: &ExperimentConfig, p: &Point) -> TrainConfig {
    let spec = &cfg.archs[p.spec];
    TrainConfig {
        eta: cfg.eta_for(spec),
        epochs: cfg.epochs_for(spec),
        batch_size: Some(cfg.train.batch_for(p.t)),
        seed: p.seed,
        record_every: cfg.train.record_every,
        track_kernel: false,
        target_mse: cfg.train.early_stop.then_some(cfg.train.mse_cut),
    }
}

struct TrainCell {
    cell: Cell,
    records: Vec<TrainRecord>,
}

fn train_cell(cfg: &ExperimentConfig, p: &Point, metric: &str) -> Result<(TrainCell, Network<f64>, LinearInverseProblem<f64>, Dataset<f64>)> {
    let (problem, data) = instance(cfg, p.m, p.t, p.seed)?;
    let net = network(cfg, p.arch, p.depth, p.m, p.seed)?;
    let tc = train_config(cfg, p);
    let init = InitialState::zeros(p.m);
    let (net, records, stop, epochs_run) = match training::sgd_train(&net, &data, &init, &tc) {
        Ok(out) => (out.net, out.records, format!("{:?}", out.stop), out.epochs_run),
        Err(Error::Divergence { epoch, records, .. }) => (net, records, "diverged".to_string(), epoch),
        Err(e) => return Err(e),
    };
    let mut cell = blank(cfg, p, metric);
    let last = records.last().map_or(f64::NAN, |r| r.loss);
    cell.train_mse = Some(training::mse(last, p.t));
    cell.epochs_run = Some(epochs_run);
    cell.epochs_to_target = records
        .iter()
        .find(|r| training::mse(r.loss, p.t) <= cfg.train.mse_cut)
        .map(|r| r.epoch);
    cell.stop = Some(stop.to_lowercase());
    Ok((TrainCell { cell, records }, net, problem, data))
}

fn or_failed(cfg: &ExperimentConfig, p: &Point, metric: &str, r: Result<Cell>) -> Cell {
    r.unwrap_or_else(|e| {
        let mut c = blank(cfg, p, metric);
        c.error = Some(e.to_string());
        c
    })
}

/// Final training MSE for every (arch, T, seed); the threshold of an
/// architecture is the largest T whose mean MSE meets `train.mse_cut`.
pub fn sweep_t(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let pts = points(cfg);
    let cells = run_pool(cfg.workers, &pts, |p| {
        or_failed(
            cfg,
            p,
            "mse",
            train_cell(cfg, p, "mse").map(|(mut tc, ..)| {
                tc.cell.value = tc.cell.train_mse;
                tc.cell
            }),
        )
    })?;
    let report = Report::new(cfg, cells, Value::Null);
    let summary = t_thresholds(&report, cfg.train.mse_cut);
    Ok(Report { summary, ..report })
}

/// Largest T with mean MSE at or below `cut`, per (arch, L).
pub fn t_thresholds(report: &Report, cut: f64) -> Value {
    let mut out = Vec::new();
    let mut keys: Vec<(Arch, usize)> = report.aggregates.iter().map(|a| (a.arch, a.depth)).collect();
    keys.dedup();
    for (arch, depth) in keys {
        let rows: Vec<&Aggregate> = report
            .aggregates
            .iter()
            .filter(|a| a.arch == arch && a.depth == depth)
            .collect();
        let threshold = rows
            .iter()
            .filter(|a| a.failed == 0 && a.mean.is_some_and(|v| v <= cut))
            .map(|a| a.t)
            .max();
        out.push(json!({
            "arch": arch,
            "L": depth,
            "threshold_t": threshold,
            "mean_mse": rows.iter().map(|a| json!({"T": a.t, "mean": a.mean, "std": a.std})).collect::<Vec<_>>(),
        }));
    }
    json!({ "mse_cut": cut, "thresholds": out })
}

fn spectrum_cell(cfg: &ExperimentConfig, p: &Point) -> Result<Cell> {
    let (_, data) = instance(cfg, p.m, p.t, p.seed)?;
    let net = network(cfg, p.arch, p.depth, p.m, p.seed)?;
    let init = InitialState::zeros(p.m);
    let k = kernel::assemble_structured(&net, data.y.view(), &init, KERNEL_BUDGET)?;
    let eig = kernel::min_eigenvalue(&k)?;
    let mut ub = f64::INFINITY;
    for i in 0..p.t {
        let inputs = KernelBoundInputs::measure(&net, data.y.column(i), &init, 0)?;
        ub = ub.min(kernel::upper_bound(&inputs)?);
    }
    let mut cell = blank(cfg, p, "lambda_min");
    cell.value = Some(eig.lambda_min);
    cell.value_db = (eig.lambda_min > 0.0).then(|| 10.0 * eig.lambda_min.log10());
    cell.lambda_max = Some(eig.lambda_max);
    cell.ub_value = Some(ub);
    Ok(cell)
}

/// `lambda_min(K(w0))` for every (arch, L, m, seed) with the closed-form
/// upper bound at sample 0..T, coordinate 0 (smallest over samples).
pub fn sweep_eigen(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let pts = points(cfg);
    let cells = run_pool(cfg.workers, &pts, |p| or_failed(cfg, p, "lambda_min", spectrum_cell(cfg, p)))?;
    let report = Report::new(cfg, cells, Value::Null);
    let summary = eigen_summary(&report);
    Ok(Report { summary, ..report })
}

/// Seeds where ADMM > LISTA > FFNN, matched on (L, m, seed).
fn eigen_summary(report: &Report) -> Value {
    let mut by: BTreeMap<(usize, usize, u64), BTreeMap<Arch, f64>> = BTreeMap::new();
    for c in &report.cells {
        if let Some(v) = c.value {
            by.entry((c.depth, c.m, c.seed)).or_default().insert(c.arch, v);
        }
    }
    let mut per_point: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
    for ((depth, m, _), vals) in &by {
        if let (Some(l), Some(a), Some(f)) = (vals.get(&Arch::Lista), vals.get(&Arch::Admm), vals.get(&Arch::Ffnn)) {
            let e = per_point.entry((*depth, *m)).or_default();
            e.1 += 1;
            if a > l && l > f {
                e.0 += 1;
            }
        }
    }
    let bound_violations = report
        .cells
        .iter()
        .filter(|c| matches!((c.value, c.ub_value), (Some(v), Some(u)) if v > u))
        .count();
    json!({
        "ordering": per_point
            .iter()
            .map(|((d, m), (wins, total))| json!({"L": d, "m": m, "admm_gt_lista_gt_ffnn": wins, "seeds": total}))
            .collect::<Vec<_>>(),
        "bound_violations": bound_violations,
    })
}

pub fn spectra(report: &Report) -> Vec<Spectrum> {
    report
        .cells
        .iter()
        .filter_map(|c| {
            Some(Spectrum {
                arch: c.arch,
                depth: c.depth,
                m: c.m,
                n: report.config.problem.n,
                t: c.t,
                seed: c.seed,
                lambda_min: c.value?,
                lambda_max: c.lambda_max?,
                ub_value: c.ub_value?,
            })
        })
        .collect()
}

/// Loss curves at matched parameter budgets.
pub fn param_efficiency(cfg: &ExperimentConfig) -> Result<(Report, Vec<(Cell, Vec<TrainRecord>)>)> {
    cfg.validate()?;
    let pts = points(cfg);
    let runs = run_pool(cfg.workers, &pts, |p| match train_cell(cfg, p, "mse") {
        Ok((mut tc, ..)) => {
            tc.cell.value = tc.cell.train_mse;
            (tc.cell, tc.records)
        }
        Err(e) => (or_failed(cfg, p, "mse", Err(e)), Vec::new()),
    })?;
    let cells: Vec<Cell> = runs.iter().map(|(c, _)| c.clone()).collect();
    let report = Report::new(cfg, cells, Value::Null);
    let mut per_arch: BTreeMap<(Arch, usize), Vec<Option<usize>>> = BTreeMap::new();
    for c in &report.cells {
        per_arch.entry((c.arch, c.depth)).or_default().push(c.epochs_to_target);
    }
    let summary = json!({
        "mse_cut": cfg.train.mse_cut,
        "archs": per_arch.iter().map(|((arch, depth), hits)| {
            let reached: Vec<f64> = hits.iter().flatten().map(|&e| e as f64).collect();
            json!({
                "arch": arch,
                "L": depth,
                "P": param_count(*arch, *depth, cfg.problem.m, cfg.problem.n),
                "reached": reached.len(),
                "runs": hits.len(),
                "mean_epochs_to_target": mean_std(&reached).0,
            })
        }).collect::<Vec<_>>(),
    });
    let mut runs = runs;
    runs.sort_by(|a, b| a.0.key().cmp(&b.0.key()));
    Ok((Report { summary, ..report }, runs))
}

fn mae_cell(cfg: &ExperimentConfig, p: &Point) -> Result<Cell> {
    let (tc, net, problem, data) = train_cell(cfg, p, "mae")?;
    let init = InitialState::zeros(p.m);
    let eval = if cfg.train.eval_on_train {
        data
    } else {
        problem.gen_dataset(cfg.train.eval_samples, seed::derive(p.seed, stream::EVAL, 0))?
    };
    let mut cell = tc.cell;
    cell.value = Some(training::mean_absolute_error(&net, &eval, &init)?);
    Ok(cell)
}

/// Train at each width, then mean absolute error on held-out samples.
pub fn generalization_mae(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let pts = points(cfg);
    let cells = run_pool(cfg.workers, &pts, |p| or_failed(cfg, p, "mae", mae_cell(cfg, p)))?;
    let report = Report::new(cfg, cells, Value::Null);
    let summary = json!({
        "eval_samples": if cfg.train.eval_on_train { cfg.train.samples } else { cfg.train.eval_samples },
        "mae_vs_m": report.aggregates.iter().map(|a| json!({"arch": a.arch, "L": a.depth, "m": a.m, "mean": a.mean, "std": a.std})).collect::<Vec<_>>(),
    });
    Ok(Report { summary, ..report })
}

/// Power-iteration Hessian study per architecture; cells hold the per-seed
/// max over sampled coordinates.
pub fn hessian_scaling(cfg: &ExperimentConfig) -> Result<(Report, Vec<curvature::CurvatureReport>)> {
    cfg.validate()?;
    let mut studies = Vec::new();
    let mut cells = Vec::new();
    for spec in &cfg.archs {
        for depth in cfg.depths_for(spec) {
            let sc = ScalingConfig {
                arch: spec.arch,
                depth,
                n: cfg.problem.n,
                lambda: cfg.problem.lambda,
                ms: cfg.grid.m.clone(),
                seeds: cfg.seeds.clone(),
                extra_coordinates: cfg.hessian.extra_coordinates,
                iters: cfg.hessian.iters,
                bootstrap: cfg.hessian.bootstrap,
            };
            let jobs: Vec<(usize, u64)> = sc.ms.iter().flat_map(|&m| sc.seeds.iter().map(move |&s| (m, s))).collect();
            let results = run_pool(cfg.workers, &jobs, |&(m, s)| curvature::scaling_cell(&sc, m, s))?;
            let mut raw: Vec<CurvatureCell> = Vec::new();
            for ((m, s), r) in jobs.iter().zip(results) {
                let p = Point {
                    spec: 0,
                    arch: spec.arch,
                    depth,
                    m: *m,
                    t: 1,
                    seed: *s,
                };
                match r {
                    Ok(group) => {
                        let mut c = blank(cfg, &p, "hs_norm");
                        c.value = group.iter().map(|g| g.hs_norm).reduce(f64::max);
                        c.q_inf = group.first().map(|g| g.q_inf);
                        cells.push(c);
                        raw.extend(group);
                    }
                    Err(e) => cells.push(or_failed(cfg, &p, "hs_norm", Err(e))),
                }
            }
            studies.push(curvature::summarize(&sc, raw)?);
        }
    }
    let summary = json!({
        "studies": studies.iter().map(|s| {
            let c = s.cells.first();
            json!({
                "arch": c.map(|c| c.arch),
                "L": c.map(|c| c.depth),
                "slope": s.slope,
                "slope_ci": s.slope_ci,
                "widths": s.widths,
                "unconverged": s.cells.iter().filter(|c| !c.converged).count(),
            })
        }).collect::<Vec<_>>(),
    });
    Ok((Report::new(cfg, cells, summary), studies))
}

fn curve_blocks<K: Ord + std::fmt::Display>(groups: BTreeMap<K, Vec<Vec<f64>>>) -> Vec<(String, Vec<Vec<f64>>)> {
    groups.into_iter().map(|(k, rows)| (k.to_string(), rows)).collect()
}

fn label(arch: Arch, depth: usize) -> String {
    format!("{arch} L={depth}")
}

/// Runs the configured experiment and writes `report.json`, `cells.csv`,
/// `aggregates.csv` and the plot data into `out` (created if missing).
pub fn run_suite(cfg: &ExperimentConfig, out: &Path) -> Result<Report> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let report = match cfg.kind {
        ExperimentKind::SweepT => {
            let r = sweep_t(cfg)?;
            let mut groups: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
            for a in &r.aggregates {
                groups
                    .entry(label(a.arch, a.depth))
                    .or_default()
                    .push(vec![a.t as f64, a.mean.unwrap_or(f64::NAN), a.std.unwrap_or(f64::NAN)]);
            }
            io::write_dat(&out.join("mse_vs_t.dat"), &["T", "mean_mse", "std_mse"], &curve_blocks(groups))?;
            r
        }
        ExperimentKind::SweepEigen => {
            let r = sweep_eigen(cfg)?;
            let mut by_depth: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
            for a in &r.aggregates {
                let db: Vec<f64> = r
                    .cells
                    .iter()
                    .filter(|c| (c.arch, c.depth, c.m, c.t) == (a.arch, a.depth, a.m, a.t))
                    .filter_map(|c| c.value_db)
                    .collect();
                let (mean_db, std_db) = mean_std(&db);
                by_depth.entry(a.arch.to_string()).or_default().push(vec![
                    a.depth as f64,
                    a.params as f64,
                    mean_db.unwrap_or(f64::NAN),
                    std_db.unwrap_or(f64::NAN),
                ]);
            }
            io::write_dat(&out.join("lambda_min_db.dat"), &["L", "P", "mean_db", "std_db"], &curve_blocks(by_depth))?;
            io::write_json(&out.join("spectra.json"), &spectra(&r))?;
            r
        }
        ExperimentKind::ParamEff => {
            let (r, runs) = param_efficiency(cfg)?;
            let mut groups: BTreeMap<String, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
            for (c, recs) in &runs {
                let g = groups.entry(format!("{} P={}", label(c.arch, c.depth), c.params)).or_default();
                for rec in recs {
                    g.entry(rec.epoch).or_default().push(training::mse(rec.loss, c.t));
                }
            }
            let blocks = groups
                .into_iter()
                .map(|(k, by_epoch)| {
                    let rows = by_epoch
                        .into_iter()
                        .map(|(e, v)| vec![e as f64, mean_std(&v).0.unwrap_or(f64::NAN)])
                        .collect();
                    (k, rows)
                })
                .collect::<Vec<_>>();
            io::write_dat(&out.join("loss_curves.dat"), &["epoch", "mean_mse"], &blocks)?;
            r
        }
        ExperimentKind::GenMae => {
            let r = generalization_mae(cfg)?;
            let mut groups: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
            for a in &r.aggregates {
                groups
                    .entry(label(a.arch, a.depth))
                    .or_default()
                    .push(vec![a.m as f64, a.mean.unwrap_or(f64::NAN), a.std.unwrap_or(f64::NAN)]);
            }
            io::write_dat(&out.join("mae_vs_m.dat"), &["m", "mean_mae", "std_mae"], &curve_blocks(groups))?;
            r
        }
        ExperimentKind::HessianScaling => {
            let (r, studies) = hessian_scaling(cfg)?;
            let raw: Vec<&CurvatureCell> = studies.iter().flat_map(|s| s.cells.iter()).collect();
            io::write_csv(&out.join("hessian_cells.csv"), &raw)?;
            let mut groups: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
            for s in &studies {
                if let Some(c) = s.cells.first() {
                    groups.insert(
                        label(c.arch, c.depth),
                        s.widths.iter().map(|w| vec![w.m as f64, w.mean_max_hs, w.mean_q_inf]).collect(),
                    );
                }
            }
            io::write_dat(&out.join("hs_vs_m.dat"), &["m", "mean_max_hs", "mean_q_inf"], &curve_blocks(groups))?;
            io::write_json(&out.join("hessian_summary.json"), &r.summary)?;
            r
        }
    };
    io::write_json(&out.join("report.json"), &report)?;
    io::write_csv(&out.join("cells.csv"), &report.cells)?;
    io::write_csv(&out.join("aggregates.csv"), &report.aggregates)?;
    Ok(report)
}

/// Resolves the output directory of a config: an explicit override, else
/// `config.output` under `root` (absolute paths kept), else `root/<kind>`.
pub fn output_dir(cfg: &ExperimentConfig, root: &Path, explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    match &cfg.output {
        Some(p) if p.is_absolute() => p.clone(),
        Some(p) => root.join(p),
        None => root.join(cfg.kind.name()),
    }
}
