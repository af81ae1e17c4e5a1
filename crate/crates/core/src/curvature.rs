//! Per-output Hessian norms through Hessian-vector products, the layer
//! sensitivity probe `Q_inf`, and the width sweep that fits how both scale
//! with `m`.

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::activation::SmoothThreshold;
use crate::error::{Error, Result};
use crate::linalg;
use crate::networks::{Arch, InitialState, Network};
use crate::scalar::Scalar;
use crate::seed::{self, stream};

/// Gradient of output coordinate `s` with respect to the flat weights.
pub fn output_gradient<S: Scalar>(net: &Network<S>, y: ArrayView1<S>, init: &InitialState<S>, s: usize) -> Result<Array1<S>> {
    if s >= net.m {
        return Err(Error::Domain(format!("output coordinate {s} outside [0, {})", net.m)));
    }
    let tr = net.forward_one(y, init)?;
    let mut e = Array2::<S>::zeros((net.m, 1));
    e[[s, 0]] = S::one();
    net.vjp(&tr, e.view())
}

/// `H_s v` by central differences of the analytic gradient with step
/// `sqrt(eps) (1 + ||w||) / ||v||`, halved up to three times if the
/// perturbed gradients are not finite.
pub fn hvp<S: Scalar>(net: &Network<S>, y: ArrayView1<S>, init: &InitialState<S>, s: usize, v: ArrayView1<S>) -> Result<Array1<S>> {
    let vn = linalg::norm(v);
    if !(vn > S::zero()) {
        return Err(Error::Domain("Hessian-vector product needs a nonzero direction".into()));
    }
    let w = net.flatten();
    let mut eps = S::epsilon().sqrt() * (S::one() + linalg::norm(w.view())) / vn;
    let mut plus = net.clone();
    let mut minus = net.clone();
    for _ in 0..4 {
        plus.set_flat(w.view())?;
        minus.set_flat(w.view())?;
        plus.axpy(eps, v)?;
        minus.axpy(-eps, v)?;
        let gp = output_gradient(&plus, y, init, s);
        let gm = output_gradient(&minus, y, init, s);
        if let (Ok(gp), Ok(gm)) = (gp, gm) {
            let hv = (gp - gm) / (eps + eps);
            if hv.iter().all(|x| x.is_finite()) {
                return Ok(hv);
            }
        }
        eps = eps * S::of(0.5);
    }
    Err(Error::NonFinite { layer: net.depth() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockNorm {
    pub estimate: f64,
    /// Relative change of the estimate over the last iteration.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Power iteration for `||H_s||`. The estimate is `||H_s v||` for the
/// current unit vector, which rises monotonically towards the largest
/// eigenvalue magnitude even when `+lambda` and `-lambda` are both present.
pub fn hessian_block_norm<S: Scalar>(
    net: &Network<S>,
    y: ArrayView1<S>,
    init: &InitialState<S>,
    s: usize,
    iters: usize,
    probe_seed: u64,
) -> Result<BlockNorm> {
    if iters < 20 {
        return Err(Error::Domain(format!("need at least 20 power iterations, got {iters}")));
    }
    let p = net.param_count();
    let mut rng = seed::rng(probe_seed, stream::PROBE, s as u64);
    let mut v: Array1<S> = Array1::from_shape_simple_fn(p, || S::of(StandardNormal.sample(&mut rng)));
    let vn = linalg::norm(v.view());
    v /= vn;
    let mut est = 0.0f64;
    let mut residual = f64::INFINITY;
    for it in 1..=iters {
        let hv = hvp(net, y, init, s, v.view())?;
        let nh = linalg::norm(hv.view()).as_f64();
        if nh == 0.0 {
            return Ok(BlockNorm {
                estimate: 0.0,
                residual: 0.0,
                iterations: it,
                converged: true,
            });
        }
        residual = (nh - est).abs() / nh;
        est = nh;
        v = hv / S::of(nh);
        if it > 1 && residual <= 1e-4 {
            return Ok(BlockNorm {
                estimate: est,
                residual,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(BlockNorm {
        estimate: est,
        residual,
        iterations: iters,
        converged: false,
    })
}

/// `max_{s, l} ||b_s^l||_inf` over every output coordinate and layer.
pub fn q_infinity<S: Scalar>(net: &Network<S>, y: ArrayView1<S>, init: &InitialState<S>) -> Result<f64> {
    let tr = net.forward_one(y, init)?;
    let b = net.layer_sensitivity(&tr, 0)?;
    Ok(b
        .iter()
        .flat_map(|m| m.iter())
        .fold(0.0f64, |a, v| a.max(v.as_f64().abs())))
}

/// `{0, m/2, m-1}` plus up to five further distinct random coordinates.
pub fn sampled_coordinates(m: usize, extra: usize, seed_value: u64) -> Vec<usize> {
    let mut out = vec![0, m / 2, m - 1];
    out.sort_unstable();
    out.dedup();
    let mut rng = seed::rng(seed_value, stream::PROBE, m as u64);
    let pool: Vec<usize> = (0..m).filter(|i| !out.contains(i)).collect();
    let take = extra.min(pool.len());
    for i in sample(&mut rng, pool.len(), take).into_iter() {
        out.push(pool[i]);
    }
    out
}

/// Heuristic smoothness constant of `w -> F(w)`: `sqrt(m T)` times the
/// largest sampled `||H_{i,s}||` over the first `samples` columns.
pub fn smoothness_estimate<S: Scalar>(
    net: &Network<S>,
    y: ndarray::ArrayView2<S>,
    init: &InitialState<S>,
    samples: usize,
    seed_value: u64,
) -> Result<f64> {
    let t = y.ncols();
    let mut best = 0.0f64;
    for i in 0..samples.min(t) {
        for s in sampled_coordinates(net.m, 1, seed::derive(seed_value, stream::PROBE, i as u64)) {
            let b = hessian_block_norm(net, y.column(i), init, s, 200, seed_value)?;
            best = best.max(b.estimate);
        }
    }
    Ok(best * ((net.m * t) as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub arch: Arch,
    pub depth: usize,
    pub n: usize,
    pub lambda: f64,
    pub ms: Vec<usize>,
    pub seeds: Vec<u64>,
    pub extra_coordinates: usize,
    pub iters: usize,
    pub bootstrap: usize,
}

impl ScalingConfig {
    pub fn new(arch: Arch, depth: usize, ms: Vec<usize>, seeds: Vec<u64>) -> Self {
        Self {
            arch,
            depth,
            n: 20,
            lambda: 1.0,
            ms,
            seeds,
            extra_coordinates: 5,
            iters: 300,
            bootstrap: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureCell {
    pub arch: Arch,
    pub depth: usize,
    pub m: usize,
    pub seed: u64,
    pub s: usize,
    pub hs_norm: f64,
    pub q_inf: f64,
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthSummary {
    pub m: usize,
    /// Mean over seeds of the per-seed max over sampled `s`.
    pub mean_max_hs: f64,
    pub mean_q_inf: f64,
    /// `sqrt(m) * Q_inf`, largest over seeds.
    pub max_scaled_q_inf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureReport {
    pub cells: Vec<CurvatureCell>,
    pub widths: Vec<WidthSummary>,
    /// Least-squares slope of `log mean_max_hs` on `log m`; `None` when
    /// any width has a zero estimate.
    pub slope: Option<f64>,
    /// 95% bootstrap interval over seeds.
    pub slope_ci: Option<(f64, f64)>,
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn log_slope(ms: &[usize], means: &[f64]) -> Option<f64> {
    if means.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    let xs: Vec<f64> = ms.iter().map(|&m| (m as f64).ln()).collect();
    let ys: Vec<f64> = means.iter().map(|v| v.ln()).collect();
    Some(fit_slope(&xs, &ys))
}

/// One `(m, seed)` cell: Gaussian init, `y ~ N(0, I_n)`, zero initial state.
pub fn scaling_cell(cfg: &ScalingConfig, m: usize, seed_value: u64) -> Result<Vec<CurvatureCell>> {
    let act = SmoothThreshold::new(cfg.lambda)?;
    let net = Network::<f64>::init_gaussian(cfg.arch, cfg.depth, m, cfg.n, act, seed::derive(seed_value, stream::WEIGHTS, m as u64))?;
    let mut rng = seed::rng(seed_value, stream::INPUT, m as u64);
    let y: Array1<f64> = Array1::from_shape_simple_fn(cfg.n, || StandardNormal.sample(&mut rng));
    let init = InitialState::zeros(m);
    let q_inf = q_infinity(&net, y.view(), &init)?;
    let mut cells = Vec::new();
    for s in sampled_coordinates(m, cfg.extra_coordinates, seed_value) {
        let b = hessian_block_norm(&net, y.view(), &init, s, cfg.iters, seed_value)?;
        cells.push(CurvatureCell {
            arch: cfg.arch,
            depth: cfg.depth,
            m,
            seed: seed_value,
            s,
            hs_norm: b.estimate,
            q_inf,
            residual: b.residual,
            converged: b.converged,
        });
    }
    Ok(cells)
}

pub fn summarize(cfg: &ScalingConfig, cells: Vec<CurvatureCell>) -> Result<CurvatureReport> {
    let mut distinct = cfg.ms.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Domain("scaling study needs at least three distinct widths".into()));
    }
    let per_seed_max = |m: usize, seed_value: u64| -> f64 {
        cells
            .iter()
            .filter(|c| c.m == m && c.seed == seed_value)
            .fold(0.0f64, |a, c| a.max(c.hs_norm))
    };
    let per_seed_q = |m: usize, seed_value: u64| -> f64 {
        cells
            .iter()
            .find(|c| c.m == m && c.seed == seed_value)
            .map_or(0.0, |c| c.q_inf)
    };
    let ns = cfg.seeds.len() as f64;
    let widths: Vec<WidthSummary> = distinct
        .iter()
        .map(|&m| WidthSummary {
            m,
            mean_max_hs: cfg.seeds.iter().map(|&sd| per_seed_max(m, sd)).sum::<f64>() / ns,
            mean_q_inf: cfg.seeds.iter().map(|&sd| per_seed_q(m, sd)).sum::<f64>() / ns,
            max_scaled_q_inf: cfg
                .seeds
                .iter()
                .map(|&sd| per_seed_q(m, sd) * (m as f64).sqrt())
                .fold(0.0, f64::max),
        })
        .collect();
    let means: Vec<f64> = widths.iter().map(|w| w.mean_max_hs).collect();
    let slope = log_slope(&distinct, &means);
    let slope_ci = slope.and_then(|_| {
        if cfg.bootstrap == 0 || cfg.seeds.len() < 2 {
            return None;
        }
        let mut rng = seed::rng(cfg.seeds[0], stream::SHUFFLE, cfg.bootstrap as u64);
        let mut draws = Vec::with_capacity(cfg.bootstrap);
        for _ in 0..cfg.bootstrap {
            let pick: Vec<u64> = (0..cfg.seeds.len())
                .map(|_| cfg.seeds[rng.random_range(0..cfg.seeds.len())])
                .collect();
            let ms: Vec<f64> = distinct
                .iter()
                .map(|&m| pick.iter().map(|&sd| per_seed_max(m, sd)).sum::<f64>() / pick.len() as f64)
                .collect();
            if let Some(sl) = log_slope(&distinct, &ms) {
                draws.push(sl);
            }
        }
        draws.sort_by(|a, b| a.total_cmp(b));
        let at = |q: f64| draws[((draws.len() - 1) as f64 * q).round() as usize];
        (!draws.is_empty()).then(|| (at(0.025), at(0.975)))
    });
    Ok(CurvatureReport {
        cells,
        widths,
        slope,
        slope_ci,
    })
}

/// Serial sweep over widths and seeds.
pub fn scaling_study(cfg: &ScalingConfig) -> Result<CurvatureReport> {
    let mut cells = Vec::new();
    for &m in &cfg.ms {
        for &sd in &cfg.seeds {
            cells.extend(scaling_cell(cfg, m, sd)?);
        }
    }
    summarize(cfg, cells)
}
