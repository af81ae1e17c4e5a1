//! Tangent kernel `K(w)` of a network over a training set, its spectrum,
//! PL* bookkeeping and the closed-form upper bounds on `lambda_min(K(w0))`.
//!
//! The kernel is indexed sample-major: row `i * m + s` belongs to output
//! coordinate `s` of sample `i`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::networks::{Arch, InitialState, Network};
use crate::scalar::Scalar;
use crate::seed::{self, stream};

/// Default cap on the kernel side `m * T`.
pub const KERNEL_BUDGET: usize = 4096;
/// Largest side solved with a full dense decomposition.
pub const DENSE_LIMIT: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct TangentKernel {
    pub k: Array2<f64>,
    pub m: usize,
    pub t: usize,
}

impl TangentKernel {
    pub fn dim(&self) -> usize {
        self.k.nrows()
    }

    pub fn max_abs(&self) -> f64 {
        self.k.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn asymmetry(&self) -> f64 {
        linalg::max_abs_asymmetry(self.k.view())
    }

    /// `r^T K r` for a residual given as `m x T` (column per sample).
    pub fn quadratic_form<S: Scalar>(&self, r: ArrayView2<S>) -> f64 {
        let v = flatten_samples(r);
        v.dot(&self.k.dot(&v))
    }

    fn symmetrize(mut k: Array2<f64>) -> Array2<f64> {
        let kt = k.t().to_owned();
        k += &kt;
        k *= 0.5;
        k
    }
}

/// Stacks the columns of an `m x T` matrix sample by sample.
pub fn flatten_samples<S: Scalar>(r: ArrayView2<S>) -> Array1<f64> {
    Array1::from_iter(r.t().iter().map(|v| v.as_f64()))
}

fn check_budget(side: usize, budget: usize) -> Result<()> {
    if side > budget {
        return Err(Error::Budget {
            what: "kernel side m*T",
            value: side,
            budget,
        });
    }
    Ok(())
}

/// Block `(i, j)` is `J_i J_j^T`; the result is symmetrised.
pub fn assemble<S: Scalar>(jacobians: &[Array2<S>], budget: usize) -> Result<TangentKernel> {
    let t = jacobians.len();
    let first = jacobians
        .first()
        .ok_or_else(|| Error::Dimension("kernel needs at least one Jacobian".into()))?;
    let (m, p) = first.dim();
    if jacobians.iter().any(|j| j.dim() != (m, p)) {
        return Err(Error::Dimension("Jacobians must share their shape".into()));
    }
    check_budget(m * t, budget)?;
    let mut stacked = Array2::<f64>::zeros((m * t, p));
    for (i, j) in jacobians.iter().enumerate() {
        stacked
            .slice_mut(ndarray::s![i * m..(i + 1) * m, ..])
            .assign(&j.mapv(|v| v.as_f64()));
    }
    let k = stacked.dot(&stacked.t());
    Ok(TangentKernel {
        k: TangentKernel::symmetrize(k),
        m,
        t,
    })
}

/// Per-sample Jacobians for the columns of `y`.
pub fn sample_jacobians<S: Scalar>(net: &Network<S>, y: ArrayView2<S>, init: &InitialState<S>) -> Result<Vec<Array2<S>>> {
    y.axis_iter(Axis(1)).map(|col| net.jacobian(col, init)).collect()
}

/// Kernel of `net` over the columns of `y` without forming any Jacobian.
///
/// Each weight block contributes `c^2 <d_{i,s}, d_{j,t}> <p_i, p_j>`, where
/// `d` is the backpropagated cotangent of that layer for seed `e_s` and `p`
/// the block input, so one Gram matrix per layer suffices.
pub fn assemble_structured<S: Scalar>(
    net: &Network<S>,
    y: ArrayView2<S>,
    init: &InitialState<S>,
    budget: usize,
) -> Result<TangentKernel> {
    let m = net.m;
    let t = y.ncols();
    check_budget(m * t, budget)?;
    let tr = net.forward(y, init)?;
    let seeds = Array2::<S>::eye(m);
    let mut seed = Array2::<S>::zeros((m, m * t));
    let mut cols = Vec::with_capacity(m * t);
    for i in 0..t {
        seed.slice_mut(ndarray::s![.., i * m..(i + 1) * m]).assign(&seeds);
        cols.extend(std::iter::repeat_n(i, m));
    }
    let adj = net.backward(&tr, seed.view(), Some(&cols))?;
    let side = m * t;
    let mut k = Array2::<f64>::zeros((side, side));
    for (l, d) in adj.iter().enumerate() {
        let d = d.mapv(|v| v.as_f64());
        let gram = d.t().dot(&d);
        let mut inputs = Array2::<f64>::zeros((t, t));
        let layer = &net.layers[l];
        if layer.w1.is_some() {
            let yf = tr.y.mapv(|v| v.as_f64());
            inputs.scaled_add(1.0 / net.n as f64, &yf.t().dot(&yf));
        }
        if layer.w2.is_some() {
            let h = tr.state_in[l].as_ref().expect("state input recorded").mapv(|v| v.as_f64());
            inputs.scaled_add(1.0 / m as f64, &h.t().dot(&h));
        }
        for a in 0..side {
            let ia = a / m;
            let row = gram.row(a);
            let mut out = k.row_mut(a);
            for b in 0..side {
                out[b] += row[b] * inputs[[ia, b / m]];
            }
        }
    }
    Ok(TangentKernel {
        k: TangentKernel::symmetrize(k),
        m,
        t,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EigenMethod {
    Dense,
    Lanczos,
}

#[derive(Debug, Clone)]
pub struct MinEigen {
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// `||K v - lambda_min v||` for the returned unit vector.
    pub residual: f64,
    pub vector: Array1<f64>,
    pub method: EigenMethod,
}

/// Smallest eigenvalue: dense solve up to [`DENSE_LIMIT`], shift-invert
/// Lanczos beyond.
pub fn min_eigenvalue(k: &TangentKernel) -> Result<MinEigen> {
    if k.dim() <= DENSE_LIMIT {
        min_eigenvalue_dense(k.k.view())
    } else {
        min_eigenvalue_lanczos(k.k.view())
    }
}

pub fn min_eigenvalue_dense(k: ArrayView2<f64>) -> Result<MinEigen> {
    if k.nrows() == 0 {
        return Err(Error::Dimension("empty kernel".into()));
    }
    let all = linalg::sym_eigenvalues(k);
    let (lambda_min, vector) = linalg::sym_min_eigenpair_dense(k);
    let residual = linalg::eigen_residual(k, lambda_min, vector.view());
    Ok(MinEigen {
        lambda_min,
        lambda_max: *all.last().expect("non-empty"),
        residual,
        vector,
        method: EigenMethod::Dense,
    })
}

pub fn min_eigenvalue_lanczos(k: ArrayView2<f64>) -> Result<MinEigen> {
    let n = k.nrows();
    if n == 0 {
        return Err(Error::Dimension("empty kernel".into()));
    }
    let (lambda_max, _) = linalg::power_iteration(n, |v: &Array1<f64>| k.dot(v), 2000, 1e-12);
    let mut delta = 1e-10 * lambda_max.max(f64::MIN_POSITIVE);
    for _ in 0..12 {
        match linalg::lanczos_min_shift_invert(k, -delta, 300, 1e-13) {
            Ok(lz) => {
                let residual = linalg::eigen_residual(k, lz.lambda_min, lz.vector.view());
                return Ok(MinEigen {
                    lambda_min: lz.lambda_min,
                    lambda_max,
                    residual,
                    vector: lz.vector,
                    method: EigenMethod::Lanczos,
                });
            }
            // shift not below the spectrum yet
            Err(Error::Factorization(_)) => delta *= 10.0,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Spectral {
        iters: 12,
        estimate: -delta,
    })
}

/// `||grad L||^2 >= mu L`.
pub fn pl_star_check(grad_norm_sq: f64, loss: f64, mu: f64) -> bool {
    grad_norm_sq >= mu * loss
}

/// `m (lambda0 - mu)^2 / R^2`, meaningful only for comparisons.
pub fn threshold_certificate(m: usize, lambda0: f64, mu: f64, radius: f64) -> Result<f64> {
    if !(mu > 0.0) || mu > lambda0 {
        return Err(Error::InvalidMargin { mu, lambda0 });
    }
    if !(radius > 0.0) {
        return Err(Error::Domain(format!("radius must be positive, got {radius}")));
    }
    Ok(m as f64 * (lambda0 - mu).powi(2) / (radius * radius))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PLCertificate {
    pub mu: f64,
    pub lambda0: f64,
    pub radius: f64,
    pub satisfied_at: Vec<usize>,
}

impl PLCertificate {
    /// `mu` defaults to `lambda0 / 2`; `R = 2 L_F ||F(w0) - X||_F / mu`.
    pub fn issue(lambda0: f64, mu: Option<f64>, lipschitz: f64, residual_norm: f64) -> Result<Self> {
        let mu = mu.unwrap_or(0.5 * lambda0);
        if !(mu > 0.0 && mu < lambda0) {
            return Err(Error::InvalidMargin { mu, lambda0 });
        }
        Ok(Self {
            mu,
            lambda0,
            radius: 2.0 * lipschitz * residual_norm / mu,
            satisfied_at: Vec::new(),
        })
    }
}

/// Largest `sqrt(lambda_max(K))` over `w0` and `probes` random points at
/// distance `radius` from it. A probe-based stand-in for the Lipschitz
/// constant of `w -> F(w)`, not a certified bound.
pub fn lipschitz_estimate<S: Scalar>(
    net: &Network<S>,
    y: ArrayView2<S>,
    init: &InitialState<S>,
    probes: usize,
    radius: f64,
    seed_value: u64,
) -> Result<f64> {
    let w0 = net.flatten();
    let mut best = 0.0f64;
    for probe in 0..=probes {
        let mut at = net.clone();
        if probe > 0 {
            let mut rng = seed::rng(seed_value, stream::PROBE, probe as u64);
            let d: Array1<f64> = Array1::from_shape_simple_fn(w0.len(), || StandardNormal.sample(&mut rng));
            let scale = radius / linalg::norm(d.view());
            at.axpy(S::of(scale), d.mapv(S::of).view())?;
        }
        let k = assemble_structured(&at, y, init, usize::MAX)?;
        let (lmax, _) = linalg::power_iteration(k.dim(), |v: &Array1<f64>| k.k.dot(v), 1000, 1e-10);
        best = best.max(lmax.sqrt());
    }
    Ok(best)
}

/// Quantities entering the closed-form bounds, measured at one sample and
/// one output coordinate `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelBoundInputs {
    pub arch: Arch,
    pub depth: usize,
    pub s: usize,
    /// `L_sigma / sqrt(m)`.
    pub l_hat: f64,
    /// `||y||^2 / n`.
    pub y_hat: f64,
    /// `||x0||^2 / m`.
    pub x_hat: f64,
    /// ADMM: `||z^l - u^l||^2 / m` for `l = 0..L-1`.
    pub a_hat: Vec<f64>,
    /// `||x~^l||` (or `||z~^l||`) for `l = 1..L`.
    pub pre_norms: Vec<f64>,
    /// ADMM: `||u^l||` for `l = 0..L`.
    pub u_norms: Vec<f64>,
    /// Spectral norms per layer; 0 where the block is absent.
    pub w1_norms: Vec<f64>,
    pub w2_norms: Vec<f64>,
    /// `||v_s^T W^L||` for the last block acting on the state (or `W^1`
    /// for a one-layer FFNN).
    pub row_norm: f64,
}

impl KernelBoundInputs {
    pub fn measure<S: Scalar>(net: &Network<S>, y: ArrayView1<S>, init: &InitialState<S>, s: usize) -> Result<Self> {
        if s >= net.m {
            return Err(Error::Domain(format!("coordinate {s} outside [0, {})", net.m)));
        }
        let tr = net.forward_one(y, init)?;
        let m = net.m as f64;
        let nrm = |v: ArrayView1<S>| linalg::norm(v).as_f64();
        let spec = |w: &Option<Array2<S>>| {
            w.as_ref()
                .map_or(0.0, |a| linalg::spectral_norm(a.view(), 2000, 1e-13).as_f64())
        };
        let (a_hat, u_norms) = if net.arch == Arch::Admm {
            let mut a = vec![(&init.x0 - &init.u0).mapv(|v| v.as_f64().powi(2)).sum() / m];
            let mut u = vec![nrm(init.u0.view())];
            for l in 0..net.depth() {
                let zu = &tr.act[l].column(0) - &tr.dual[l].column(0);
                if l + 1 < net.depth() {
                    a.push(nrm(zu.view()).powi(2) / m);
                }
                u.push(nrm(tr.dual[l].column(0)));
            }
            (a, u)
        } else {
            (Vec::new(), Vec::new())
        };
        let last = net.layers.last().expect("at least one layer");
        let last_block = last.w2.as_ref().or(last.w1.as_ref()).expect("layer has a block");
        Ok(Self {
            arch: net.arch,
            depth: net.depth(),
            s,
            l_hat: net.act.lipschitz_constants().0.as_f64() / m.sqrt(),
            y_hat: nrm(y).powi(2) / net.n as f64,
            x_hat: nrm(init.x0.view()).powi(2) / m,
            a_hat,
            pre_norms: tr.pre.iter().map(|p| nrm(p.column(0))).collect(),
            u_norms,
            w1_norms: net.layers.iter().map(|l| spec(&l.w1)).collect(),
            w2_norms: net.layers.iter().map(|l| spec(&l.w2)).collect(),
            row_norm: nrm(last_block.row(s)),
        })
    }

    /// Norm of the single block of FFNN layer `j` (1-based).
    fn ffnn_norm(&self, j: usize) -> f64 {
        self.w1_norms[j - 1].max(self.w2_norms[j - 1])
    }

    /// `prod_{l=from}^{to} ||W2^l||^2` with 1-based, inclusive bounds.
    fn w2_product(&self, from: usize, to: usize) -> f64 {
        (from..=to).map(|l| self.w2_norms[l - 1].powi(2)).product()
    }
}

fn require_depth(inputs: &KernelBoundInputs, arch: Arch) -> Result<usize> {
    if inputs.depth < 1 {
        return Err(Error::Domain("bound needs L >= 1".into()));
    }
    if inputs.arch != arch {
        return Err(Error::Contract(format!(
            "inputs measured on {} used for the {} bound",
            inputs.arch, arch
        )));
    }
    Ok(inputs.depth)
}

pub fn ub_ffnn(inputs: &KernelBoundInputs) -> Result<f64> {
    let depth = require_depth(inputs, Arch::Ffnn)?;
    let lh = inputs.l_hat;
    let sq = |j: usize| inputs.ffnn_norm(j).powi(2);
    let full: f64 = (1..depth).map(sq).product();
    let mut sum = 0.0;
    for i in 1..depth {
        let others: f64 = (1..depth).filter(|&j| j != i).map(sq).product();
        sum += inputs.row_norm.powi(2) * others;
    }
    Ok(lh.powi(2 * depth as i32) * inputs.y_hat * (sum + full))
}

pub fn ub_lista(inputs: &KernelBoundInputs) -> Result<f64> {
    let depth = require_depth(inputs, Arch::Lista)?;
    let lh = inputs.l_hat;
    let (y, x) = (inputs.y_hat, inputs.x_hat);
    if depth == 1 {
        return Ok(lh * lh * (y + x));
    }
    let v = inputs.row_norm.powi(2);
    let ld = depth as i32;
    let mut total = lh.powi(2 * ld) * (y + x) * v * inputs.w2_product(2, depth - 1);
    for k in 2..depth {
        let pre = inputs.pre_norms[k - 2];
        total += lh.powi(2 * ld - 2 * k as i32 + 2)
            * (y + lh * lh * pre * pre)
            * v
            * inputs.w2_product(k + 1, depth - 1);
    }
    let pre = inputs.pre_norms[depth - 2];
    total += lh * lh * (y + lh * lh * pre * pre);
    Ok(total)
}

/// The fully expanded two-layer LISTA bound, where `||x~^1||` is replaced
/// by `||W1^1|| sqrt(y_hat) + ||W2^1|| sqrt(x_hat)`.
pub fn ub_lista_two_layer_expanded(inputs: &KernelBoundInputs) -> Result<f64> {
    if require_depth(inputs, Arch::Lista)? != 2 {
        return Err(Error::Domain("expanded form is the L = 2 case".into()));
    }
    let lh4 = inputs.l_hat.powi(4);
    let (y, x) = (inputs.y_hat, inputs.x_hat);
    let (w1, w2) = (inputs.w1_norms[0], inputs.w2_norms[0]);
    let v = inputs.row_norm.powi(2);
    Ok(lh4 * y * (w1 * w1 + v)
        + inputs.l_hat.powi(2) * y
        + lh4 * x * (w2 * w2 + v)
        + 2.0 * lh4 * (x * y).sqrt() * w1 * w2)
}

pub fn ub_admm(inputs: &KernelBoundInputs) -> Result<f64> {
    let depth = require_depth(inputs, Arch::Admm)?;
    let lh = inputs.l_hat;
    let y = inputs.y_hat;
    let a = &inputs.a_hat;
    let v = inputs.row_norm.powi(2);
    let ld = depth as i32;
    let mut total = lh * lh * (y + a[depth - 1]);
    for k in 1..depth {
        total += lh.powi(2 * ld - 2 * k as i32 + 2) * (y + a[k - 1]) * v * inputs.w2_product(k + 1, depth - 1);
    }
    Ok(total)
}

pub fn upper_bound(inputs: &KernelBoundInputs) -> Result<f64> {
    match inputs.arch {
        Arch::Lista => ub_lista(inputs),
        Arch::Admm => ub_admm(inputs),
        Arch::Ffnn => ub_ffnn(inputs),
    }
}
