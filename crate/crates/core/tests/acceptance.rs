//! Acceptance suite. Every check prints one `PASS`/`FAIL` line to stderr
//! (uncaptured, so it shows up in plain `cargo test` output) and then
//! asserts. The training-threshold sweep needs hours on a single core and
//! is `#[ignore]`d; run it with `cargo test --test acceptance -- --ignored`.

use std::io::Write;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use unfolding::experiments::{self, ArchSpec, ExperimentConfig, ExperimentKind, ProblemSpec};
use unfolding::kernel::{self, KERNEL_BUDGET};
use unfolding::networks::{hidden_norms_within_caps, weight_norm_ratios};
use unfolding::problem::{admm_solve, ista_solve, lasso_objective, SolverConfig};
use unfolding::training::{self, TrainConfig};
use unfolding::{curvature, param_count, Arch, InitialState, Network64, Problem64, SmoothThreshold};

fn verdict(id: &str, name: &str, pass: bool, detail: String, started: Instant) {
    let line = format!(
        "[acceptance] {id} {name}: {} ({detail}; {:.1}s)\n",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{id} {name} failed: {detail}");
}

fn gaussian_vec(len: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    Array1::from_shape_simple_fn(len, || StandardNormal.sample(rng))
}

fn random_coords(p: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..count).map(|_| rng.random_range(0..p)).collect()
}

fn central_difference(w: &Array1<f64>, k: usize, f: impl Fn(&Array1<f64>) -> Array1<f64>) -> Array1<f64> {
    let h = 1e-5 * (1.0 + w[k].abs());
    let mut wp = w.clone();
    wp[k] += h;
    let mut wm = w.clone();
    wm[k] -= h;
    (f(&wp) - f(&wm)) / (2.0 * h)
}

fn sup(v: ArrayView1<f64>) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

#[test]
fn c01_gradient_correctness() {
    let t0 = Instant::now();
    let mut worst_jac = 0.0f64;
    let mut worst_grad = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for (m, n, depth) in [(6, 3, 2), (10, 4, 3)] {
        for arch in Arch::ALL {
            let net = Network64::init_gaussian(arch, depth, m, n, SmoothThreshold::default(), rng.random()).unwrap();
            let init = InitialState::zeros(m);
            let y = gaussian_vec(n, &mut rng);
            let jac = net.jacobian(y.view(), &init).unwrap();
            let w = net.flatten();
            let coords = random_coords(w.len(), 200, &mut rng);
            let out = |wv: &Array1<f64>| net.with_flat(wv.view()).unwrap().forward_one(y.view(), &init).unwrap().output.column(0).to_owned();
            for &k in &coords {
                let fd = central_difference(&w, k, out);
                let an = jac.column(k);
                let scale = sup(an).max(sup(fd.view()));
                if scale > 0.0 {
                    worst_jac = worst_jac.max(sup((&fd - &an).view()) / scale);
                }
            }

            let p = Problem64::generate(n, m, 2, 10.0, 10.0, rng.random()).unwrap();
            let data = p.gen_dataset(3, rng.random()).unwrap();
            let (_, g) = training::full_gradient(&net, &data, &init).unwrap();
            let lossf = |wv: &Array1<f64>| Array1::from_elem(1, training::loss(&net.with_flat(wv.view()).unwrap(), &data, &init).unwrap());
            let coords = random_coords(w.len(), 200, &mut rng);
            let fd: Vec<f64> = coords.iter().map(|&k| central_difference(&w, k, lossf)[0]).collect();
            let an: Vec<f64> = coords.iter().map(|&k| g[k]).collect();
            let scale = an.iter().chain(&fd).fold(0.0f64, |a, v| a.max(v.abs()));
            let err = an.iter().zip(&fd).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
            worst_grad = worst_grad.max(err / scale);
        }
    }
    let pass = worst_jac <= 1e-6 && worst_grad <= 1e-6 && t0.elapsed().as_secs_f64() < 10.0;
    verdict(
        "C1",
        "gradient correctness",
        pass,
        format!("max rel err jacobian {worst_jac:.2e}, loss gradient {worst_grad:.2e}, tol 1e-6"),
        t0,
    );
}

#[test]
fn c02_gradient_kernel_identity() {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    for i in 0..10u64 {
        let arch = Arch::ALL[i as usize % 3];
        let p = Problem64::generate(20, 100, 2, 10.0, 10.0, 500 + i).unwrap();
        let data = p.gen_dataset(10, 500 + i).unwrap();
        let net = Network64::init_gaussian(arch, 2 + (i as usize % 3), 100, 20, SmoothThreshold::default(), 500 + i).unwrap();
        let init = InitialState::zeros(100);
        let tr = net.forward(data.y.view(), &init).unwrap();
        let r = &tr.output - &data.x;
        let g = net.vjp(&tr, r.view()).unwrap();
        let k = kernel::assemble_structured(&net, data.y.view(), &init, KERNEL_BUDGET).unwrap();
        let lhs = g.dot(&g);
        let rhs = k.quadratic_form(r.view());
        worst = worst.max((lhs - rhs).abs() / lhs.abs());
    }
    let pass = worst <= 1e-8 && t0.elapsed().as_secs_f64() < 30.0;
    verdict("C2", "gradient-kernel identity", pass, format!("max rel err {worst:.2e}, tol 1e-8"), t0);
}

#[test]
fn c03_kernel_psd_and_diagonal_bound() {
    let t0 = Instant::now();
    let mut failures = Vec::new();
    let mut worst_ratio = f64::INFINITY;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + seed);
        let arch = Arch::ALL[rng.random_range(0..3)];
        let depth = rng.random_range(1..=4);
        let n = rng.random_range(2..=8);
        let m = rng.random_range(n + 1..=40);
        let t = rng.random_range(1..=8);
        let p = Problem64::generate(n, m, 1 + m / 10, 10.0, 10.0, seed).unwrap();
        let data = p.gen_dataset(t, seed).unwrap();
        let net = Network64::init_gaussian(arch, depth, m, n, SmoothThreshold::default(), seed).unwrap();
        let init = InitialState::zeros(m);
        let k = kernel::assemble_structured(&net, data.y.view(), &init, KERNEL_BUDGET).unwrap();
        let e = kernel::min_eigenvalue(&k).unwrap();
        let psd = e.lambda_min >= -1e-8 * e.lambda_max;
        let diag = e.lambda_min <= k.k[[0, 0]];
        worst_ratio = worst_ratio.min(e.lambda_min / e.lambda_max);
        if !(psd && diag) {
            failures.push(seed);
        }
    }
    let pass = failures.is_empty() && t0.elapsed().as_secs_f64() < 120.0;
    verdict(
        "C3",
        "kernel PSD and diagonal bound",
        pass,
        format!("50 instances, failing seeds {failures:?}, min lambda_min/lambda_max {worst_ratio:.2e}"),
        t0,
    );
}

fn eigen_config(depths: Vec<usize>, m: usize, n: usize, t: usize, seeds: Vec<u64>) -> ExperimentConfig {
    let mut c = ExperimentConfig::preset(ExperimentKind::SweepEigen);
    c.problem = ProblemSpec {
        m,
        n,
        k: 2,
        ..ProblemSpec::default()
    };
    c.seeds = seeds;
    c.grid.depth = depths;
    c.train.samples = t;
    c.workers = std::thread::available_parallelism().map_or(1, |p| p.get());
    c
}

#[test]
fn c04_eigenvalue_ordering() {
    let t0 = Instant::now();
    let cfg = eigen_config(vec![3, 5, 7], 100, 20, 10, (0..10).collect());
    let report = experiments::sweep_eigen(&cfg).unwrap();
    let ordering = report.summary["ordering"].as_array().unwrap().clone();
    let wins: Vec<(u64, u64)> = ordering
        .iter()
        .map(|o| (o["L"].as_u64().unwrap(), o["admm_gt_lista_gt_ffnn"].as_u64().unwrap()))
        .collect();
    let mut pairwise = Vec::new();
    for depth in [3usize, 5, 7] {
        let at = |arch: Arch, seed: u64| {
            report
                .cells
                .iter()
                .find(|c| c.arch == arch && c.depth == depth && c.seed == seed)
                .and_then(|c| c.value)
                .unwrap()
        };
        let admm_lista = (0..10).filter(|&s| at(Arch::Admm, s) > at(Arch::Lista, s)).count();
        let lista_ffnn = (0..10).filter(|&s| at(Arch::Lista, s) > at(Arch::Ffnn, s)).count();
        pairwise.push(format!("L={depth}: admm>lista {admm_lista}/10, lista>ffnn {lista_ffnn}/10"));
    }
    let pass = wins.len() == 3 && wins.iter().all(|&(_, w)| w >= 8) && t0.elapsed().as_secs_f64() < 1200.0;
    verdict(
        "C4",
        "eigenvalue ordering ADMM > LISTA > FFNN",
        pass,
        format!("full ordering per L {wins:?}, need >= 8/10; {}", pairwise.join("; ")),
        t0,
    );
}

#[test]
fn c05_upper_bound_validity() {
    let t0 = Instant::now();
    let cfg = eigen_config(vec![1, 2, 3], 50, 10, 10, (0..10).collect());
    let report = experiments::sweep_eigen(&cfg).unwrap();
    let failed = report.cells.iter().filter(|c| c.error.is_some()).count();
    let violations: Vec<String> = report
        .cells
        .iter()
        .filter(|c| !matches!((c.value, c.ub_value), (Some(v), Some(u)) if v <= u))
        .map(|c| format!("{} L={} seed={}", c.arch, c.depth, c.seed))
        .collect();
    let pass = report.cells.len() == 90 && failed == 0 && violations.is_empty() && t0.elapsed().as_secs_f64() < 300.0;
    verdict(
        "C5",
        "eigenvalue upper bounds",
        pass,
        format!("{} cells, {failed} errors, violations {violations:?}", report.cells.len()),
        t0,
    );
}

#[test]
fn c06_parameter_counts() {
    let t0 = Instant::now();
    let got = [
        param_count(Arch::Lista, 6, 100, 20),
        param_count(Arch::Admm, 6, 100, 20),
        param_count(Arch::Ffnn, 8, 100, 20),
        param_count(Arch::Ffnn, 11, 100, 20),
    ];
    let init = Network64::init_gaussian(Arch::Ffnn, 11, 100, 20, SmoothThreshold::default(), 0).unwrap();
    let pass = got == [72_000, 72_000, 72_000, 102_000] && init.flatten().len() == 102_000;
    verdict("C6", "parameter counts", pass, format!("{got:?}"), t0);
}

#[test]
#[ignore = "several hours on one core; run with --ignored"]
fn c07_training_threshold() {
    let t0 = Instant::now();
    let mut cfg = ExperimentConfig::preset(ExperimentKind::SweepT);
    cfg.archs = vec![
        ArchSpec::new(Arch::Lista, 11, 0.12, 30_000),
        ArchSpec::new(Arch::Admm, 11, 0.09, 40_000),
        ArchSpec::new(Arch::Ffnn, 14, 0.04, 40_000),
    ];
    cfg.grid.t = vec![5, 10, 20, 40, 80, 120];
    cfg.train.mse_cut = 1e-3;
    cfg.train.early_stop = true;
    cfg.workers = std::thread::available_parallelism().map_or(1, |p| p.get());
    let report = experiments::sweep_t(&cfg).unwrap();
    let count = |arch: Arch, t: usize, hit: bool| {
        report
            .cells
            .iter()
            .filter(|c| c.arch == arch && c.t == t)
            .filter(|c| c.value.is_some_and(|v| (v <= 1e-3) == hit))
            .count()
    };
    let threshold = |arch: Arch| -> Option<u64> {
        report.summary["thresholds"]
            .as_array()
            .unwrap()
            .iter()
            .find(|v| v["arch"] == arch.name())
            .and_then(|v| v["threshold_t"].as_u64())
    };
    let mut lines = Vec::new();
    let mut pass = true;
    for arch in [Arch::Lista, Arch::Admm] {
        let small = count(arch, 20, true);
        let large = count(arch, 120, false);
        lines.push(format!("{arch}: T=20 reached {small}/10, T=120 missed {large}/10"));
        pass &= small >= 8 && large >= 8;
    }
    let (tl, ta, tf) = (threshold(Arch::Lista), threshold(Arch::Admm), threshold(Arch::Ffnn));
    let lower = |unfolded: Option<u64>| match (tf, unfolded) {
        (_, None) => false,
        (None, Some(_)) => true,
        (Some(f), Some(u)) => f < u,
    };
    pass &= lower(tl) && lower(ta) && t0.elapsed().as_secs_f64() < 4.0 * 3600.0;
    lines.push(format!("thresholds lista {tl:?}, admm {ta:?}, ffnn {tf:?}"));
    verdict("C7", "training threshold on T", pass, lines.join("; "), t0);
}

#[test]
fn c08_hessian_scaling() {
    let t0 = Instant::now();
    let mut cfg = ExperimentConfig::preset(ExperimentKind::HessianScaling);
    cfg.seeds = (0..5).collect();
    cfg.grid.m = vec![50, 100, 200, 400];
    cfg.workers = std::thread::available_parallelism().map_or(1, |p| p.get());
    let (_, studies) = experiments::hessian_scaling(&cfg).unwrap();
    let mut pass = true;
    let mut lines = Vec::new();
    for s in &studies {
        let arch = s.cells[0].arch;
        let slope = s.slope.unwrap_or(f64::NAN);
        let in_range = (-0.8..=-0.2).contains(&slope);
        let band = s.cells.iter().all(|c| {
            let scaled = c.q_inf * (c.m as f64).sqrt();
            let width = 10.0 * (c.m as f64).ln();
            scaled <= width && scaled >= 1.0 / width
        });
        let max_scaled = s.widths.iter().map(|w| w.max_scaled_q_inf).fold(0.0, f64::max);
        pass &= in_range && band;
        lines.push(format!("{arch} slope {slope:.3} ci {:?}, max sqrt(m) Q_inf {max_scaled:.2}", s.slope_ci));
    }
    pass &= t0.elapsed().as_secs_f64() < 1800.0;
    verdict("C8", "Hessian norm scaling in [-0.8, -0.2]", pass, lines.join("; "), t0);
}

#[test]
fn c09_pl_star_along_trajectory() {
    let t0 = Instant::now();
    let (m, n, t) = (100, 20, 10);
    let p = Problem64::generate(n, m, 2, 10.0, 10.0, 77).unwrap();
    let data = p.gen_dataset(t, 77).unwrap();
    let net = Network64::init_gaussian(Arch::Lista, 3, m, n, SmoothThreshold::default(), 77).unwrap();
    let init = InitialState::zeros(m);
    let loss0 = training::loss(&net, &data, &init).unwrap();
    let lf = kernel::lipschitz_estimate(&net, data.y.view(), &init, 2, 1.0, 77).unwrap();
    let beta = curvature::smoothness_estimate(&net, data.y.view(), &init, 2, 77).unwrap();
    let eta = 0.5 * training::theoretical_step_size(lf, beta, loss0).unwrap();
    let cfg = TrainConfig {
        eta,
        epochs: 200,
        batch_size: None,
        seed: 77,
        record_every: 2,
        track_kernel: true,
        target_mse: None,
    };
    let out = training::gd_train(&net, &data, &init, &cfg).unwrap();
    let mu = out.records.iter().filter_map(|r| r.lambda_min).fold(f64::INFINITY, f64::min);
    let tracked = out.records.iter().filter(|r| r.lambda_min.is_some()).count();
    let pl_ok = out.records.iter().all(|r| kernel::pl_star_check(r.grad_norm_sq, r.loss, mu));
    let env = training::convergence_envelope(&out.records, mu, eta).unwrap();
    let pass = mu > 0.0 && tracked >= 5 && pl_ok && env.pass && t0.elapsed().as_secs_f64() < 1200.0;
    verdict(
        "C9",
        "PL* along the GD trajectory",
        pass,
        format!(
            "eta {eta:.3e}, mu {mu:.3e} from {tracked} kernels, PL* at all {} checkpoints: {pl_ok}, envelope {:.1}%",
            out.records.len(),
            100.0 * env.fraction
        ),
        t0,
    );
}

#[test]
fn c10_initialisation_norm_bounds() {
    let t0 = Instant::now();
    let (m, n, depth, draws) = (100, 20, 3, 1000u64);
    let mut weights_ok = [0usize; 3];
    let mut hidden_ok = [0usize; 2];
    for draw in 0..draws {
        let mut rng = ChaCha8Rng::seed_from_u64(70_000 + draw);
        let y = gaussian_vec(n, &mut rng);
        let init = InitialState::zeros(m);
        for (i, arch) in Arch::ALL.into_iter().enumerate() {
            let net = Network64::init_gaussian(arch, depth, m, n, SmoothThreshold::default(), 70_000 + draw).unwrap();
            let (r1, r2) = weight_norm_ratios(&net);
            if r1 <= 1.0 && r2 <= 1.0 {
                weights_ok[i] += 1;
            }
            if arch.is_unfolded() && hidden_norms_within_caps(&net, y.view(), &init).unwrap() {
                hidden_ok[i] += 1;
            }
        }
    }
    let need = (0.99 * draws as f64).ceil() as usize;
    let pass = weights_ok.iter().chain(&hidden_ok).all(|&c| c >= need) && t0.elapsed().as_secs_f64() < 300.0;
    verdict(
        "C10",
        "initialisation norm bounds",
        pass,
        format!("weight caps held {weights_ok:?}/1000 (lista, admm, ffnn), hidden caps {hidden_ok:?}/1000 (lista, admm), need {need}"),
        t0,
    );
}

/// Cyclic coordinate descent on `0.5 ||y - A x||^2 + gamma ||x||_1`.
fn coordinate_descent(a: ArrayView2<f64>, y: ArrayView1<f64>, gamma: f64, sweeps: usize) -> Array1<f64> {
    let m = a.ncols();
    let col_sq: Vec<f64> = (0..m).map(|j| a.column(j).dot(&a.column(j))).collect();
    let mut x = Array1::<f64>::zeros(m);
    let mut r = y.to_owned();
    for _ in 0..sweeps {
        for j in 0..m {
            if col_sq[j] == 0.0 {
                continue;
            }
            let rho = a.column(j).dot(&r) + col_sq[j] * x[j];
            let next = rho.signum() * (rho.abs() - gamma).max(0.0) / col_sq[j];
            let delta = next - x[j];
            if delta != 0.0 {
                r.scaled_add(-delta, &a.column(j));
                x[j] = next;
            }
        }
    }
    x
}

#[test]
fn c11_baseline_solver_agreement() {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    let cfg = SolverConfig {
        gamma: 0.1,
        tau: None,
        rho: 1.0,
        iters: 20_000,
    };
    for seed in 0..10u64 {
        let p = Problem64::generate(20, 50, 3, f64::INFINITY, 10.0, 300 + seed).unwrap();
        let data = p.gen_dataset(1, 300 + seed).unwrap();
        let y = data.y.column(0);
        let ista = ista_solve(p.a.view(), y, &cfg).unwrap();
        let admm = admm_solve(p.a.view(), y, &cfg).unwrap();
        let cd = coordinate_descent(p.a.view(), y, cfg.gamma, 20_000);
        let fi = *ista.objective.last().unwrap();
        let fa = *admm.objective.last().unwrap();
        let fc = lasso_objective(p.a.view(), y, cd.view(), cfg.gamma);
        worst = worst.max((fi - fa).abs()).max((fi - fc).abs()).max((fa - fc).abs());
    }
    let pass = worst <= 1e-6 && t0.elapsed().as_secs_f64() < 60.0;
    verdict("C11", "LASSO solver agreement", pass, format!("max objective gap {worst:.2e}, tol 1e-6"), t0);
}

#[allow(dead_code)]
fn _unused(_: Array2<f64>) {}
