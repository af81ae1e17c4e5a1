//! Synthetic sparse linear inverse problems `y = A x + e` and the classic
//! ISTA / ADMM LASSO solvers used as baselines.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::activation::hard_threshold;
use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Scalar;
use crate::seed::{self, stream};

/// Forward operator plus the generation settings that go with it.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearInverseProblem<S> {
    pub a: Array2<S>,
    pub k: usize,
    pub snr_db: f64,
    pub frob_target: f64,
    pub seed: u64,
}

/// Training pairs stored column-wise: `y` is `n x T`, `x` is `m x T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S> {
    pub y: Array2<S>,
    pub x: Array2<S>,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(y: Array2<S>, x: Array2<S>) -> Result<Self> {
        if y.ncols() != x.ncols() || y.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "dataset needs matching nonzero sample counts, got {} and {}",
                y.ncols(),
                x.ncols()
            )));
        }
        Ok(Self { y, x })
    }

    pub fn len(&self) -> usize {
        self.y.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn m(&self) -> usize {
        self.x.nrows()
    }

    pub fn pair(&self, i: usize) -> (ArrayView1<'_, S>, ArrayView1<'_, S>) {
        (self.y.column(i), self.x.column(i))
    }

    /// Columns `idx` of both matrices.
    pub fn select(&self, idx: &[usize]) -> Dataset<S> {
        Dataset {
            y: self.y.select(Axis(1), idx),
            x: self.x.select(Axis(1), idx),
        }
    }

    pub fn head(&self, t: usize) -> Dataset<S> {
        let idx: Vec<usize> = (0..t.min(self.len())).collect();
        self.select(&idx)
    }
}

/// Uniform(-1, 1) entries rescaled to the requested Frobenius norm.
pub fn gen_operator<S: Scalar>(n: usize, m: usize, frob_target: f64, seed: u64) -> Result<Array2<S>> {
    if n == 0 || n >= m {
        return Err(Error::Dimension(format!(
            "operator needs 1 <= n < m, got n = {n}, m = {m}"
        )));
    }
    if !(frob_target > 0.0) || !frob_target.is_finite() {
        return Err(Error::Domain(format!("Frobenius target must be positive, got {frob_target}")));
    }
    let mut rng = seed::rng(seed, stream::OPERATOR, 0);
    let unif = Uniform::new(-1.0f64, 1.0).expect("valid range");
    let raw = Array2::<f64>::from_shape_fn((n, m), |_| unif.sample(&mut rng));
    let fro = linalg::frobenius(raw.view());
    let scale = frob_target / fro;
    Ok(raw.mapv(|v| S::of(v * scale)))
}

/// `k` nonzeros at uniformly chosen positions with standard normal amplitudes.
pub fn gen_sparse_target<S: Scalar>(m: usize, k: usize, seed: u64) -> Result<Array1<S>> {
    if k == 0 || k > m {
        return Err(Error::Sparsity { k, m });
    }
    let mut rng = seed::rng(seed, stream::TARGET, 0);
    let mut support = sample(&mut rng, m, k).into_vec();
    support.sort_unstable();
    let mut x = Array1::<S>::zeros(m);
    for &i in &support {
        let mut v: f64 = StandardNormal.sample(&mut rng);
        // an exact zero draw would break the sparsity count
        while v == 0.0 {
            v = StandardNormal.sample(&mut rng);
        }
        x[i] = S::of(v);
    }
    Ok(x)
}

/// `y = A x + e` with Gaussian noise scaled to the requested SNR on `||Ax||^2`.
pub fn observe<S: Scalar>(a: ArrayView2<S>, x: ArrayView1<S>, snr_db: f64, seed: u64) -> Result<Array1<S>> {
    if a.ncols() != x.len() {
        return Err(Error::Dimension(format!(
            "operator has {} columns but target has length {}",
            a.ncols(),
            x.len()
        )));
    }
    let signal = a.dot(&x);
    if snr_db == f64::INFINITY {
        return Ok(signal);
    }
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::Domain(format!("invalid SNR {snr_db}")));
    }
    let power: f64 = signal.iter().map(|v| v.as_f64().powi(2)).sum();
    if power == 0.0 {
        return Err(Error::DegenerateSignal { snr_db });
    }
    let mut rng = seed::rng(seed, stream::NOISE, 0);
    let e: Array1<f64> = Array1::from_shape_fn(signal.len(), |_| StandardNormal.sample(&mut rng));
    let e_pow: f64 = e.dot(&e);
    let scale = (power / 10f64.powf(snr_db / 10.0) / e_pow).sqrt();
    Ok(Array1::from_shape_fn(signal.len(), |i| {
        S::of(signal[i].as_f64() + scale * e[i])
    }))
}

impl<S: Scalar> LinearInverseProblem<S> {
    pub fn generate(n: usize, m: usize, k: usize, snr_db: f64, frob_target: f64, seed: u64) -> Result<Self> {
        if k == 0 || k > m {
            return Err(Error::Sparsity { k, m });
        }
        let a = gen_operator(n, m, frob_target, seed)?;
        Ok(Self {
            a,
            k,
            snr_db,
            frob_target,
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.a.ncols()
    }

    /// `T` pairs sharing this operator. Sample `i` draws from seeds derived
    /// from `(seed, i)`, so any subset can be regenerated independently.
    pub fn gen_dataset(&self, t: usize, seed: u64) -> Result<Dataset<S>> {
        if t == 0 {
            return Err(Error::Domain("dataset needs T >= 1".into()));
        }
        let (n, m) = (self.n(), self.m());
        let mut y = Array2::<S>::zeros((n, t));
        let mut x = Array2::<S>::zeros((m, t));
        for i in 0..t {
            let xi = gen_sparse_target::<S>(m, self.k, seed::derive(seed, stream::TARGET, i as u64))?;
            let yi = observe(self.a.view(), xi.view(), self.snr_db, seed::derive(seed, stream::NOISE, i as u64))?;
            x.column_mut(i).assign(&xi);
            y.column_mut(i).assign(&yi);
        }
        Dataset::new(y, x)
    }
}

/// `0.5 ||y - A x||^2 + gamma ||x||_1`.
pub fn lasso_objective<S: Scalar>(a: ArrayView2<S>, y: ArrayView1<S>, x: ArrayView1<S>, gamma: S) -> S {
    let r = &y - &a.dot(&x);
    S::of(0.5) * r.dot(&r) + gamma * x.iter().map(|v| v.abs()).sum::<S>()
}

/// Settings for the model-based baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub gamma: f64,
    /// ISTA step; `None` selects `0.99 / lambda_max(A^T A)`.
    pub tau: Option<f64>,
    pub rho: f64,
    pub iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            tau: None,
            rho: 1.0,
            iters: 1000,
        }
    }
}

/// Largest eigenvalue of `A^T A`.
pub fn gram_lambda_max<S: Scalar>(a: ArrayView2<S>) -> S {
    let s = linalg::spectral_norm(a, 500, 1e-14);
    s * s
}

#[derive(Debug, Clone)]
pub struct SolverOutput<S> {
    pub x: Array1<S>,
    pub objective: Vec<S>,
}

/// Iterative soft-thresholding from `x = 0`.
pub fn ista_solve<S: Scalar>(a: ArrayView2<S>, y: ArrayView1<S>, cfg: &SolverConfig) -> Result<SolverOutput<S>> {
    check_dims(a, y)?;
    let gamma = S::of(cfg.gamma);
    let tau = S::of(match cfg.tau {
        Some(t) => t,
        None => 0.99 / gram_lambda_max(a).as_f64(),
    });
    if !(tau > S::zero()) {
        return Err(Error::Domain(format!("ISTA step must be positive, got {tau}")));
    }
    let m = a.ncols();
    let mut x = Array1::<S>::zeros(m);
    let mut objective = vec![lasso_objective(a, y, x.view(), gamma)];
    let aty = a.t().dot(&y) * tau;
    let thresh = gamma * tau;
    for iter in 1..=cfg.iters {
        let r = a.dot(&x);
        let grad = a.t().dot(&r);
        let mut z = &x - &(grad * tau);
        z += &aty;
        x = z.mapv(|v| hard_threshold(v, thresh));
        let obj = lasso_objective(a, y, x.view(), gamma);
        let prev = *objective.last().expect("seeded");
        if (obj - prev).as_f64() > 1e-8 * prev.abs().as_f64().max(f64::MIN_POSITIVE) {
            return Err(Error::StepSize {
                iter,
                prev: prev.as_f64(),
                next: obj.as_f64(),
            });
        }
        objective.push(obj);
    }
    Ok(SolverOutput { x, objective })
}

/// Scaled-form ADMM from `x = z = u = 0`; returns the `z` iterate.
pub fn admm_solve<S: Scalar>(a: ArrayView2<S>, y: ArrayView1<S>, cfg: &SolverConfig) -> Result<SolverOutput<S>> {
    check_dims(a, y)?;
    if !(cfg.rho > 0.0) {
        return Err(Error::Domain(format!("ADMM penalty must be positive, got {}", cfg.rho)));
    }
    let gamma = S::of(cfg.gamma);
    let rho = S::of(cfg.rho);
    let m = a.ncols();
    let mut gram = a.t().dot(&a);
    for i in 0..m {
        gram[[i, i]] += rho;
    }
    let chol = linalg::cholesky(gram.view())?;
    let aty = a.t().dot(&y);
    let mut z = Array1::<S>::zeros(m);
    let mut u = Array1::<S>::zeros(m);
    let mut objective = vec![lasso_objective(a, y, z.view(), gamma)];
    let thresh = gamma / rho;
    for _ in 0..cfg.iters {
        let rhs = &aty + &((&z - &u) * rho);
        let x = linalg::cholesky_solve(chol.view(), rhs.view());
        let v = &x + &u;
        z = v.mapv(|t| hard_threshold(t, thresh));
        u = &v - &z;
        objective.push(lasso_objective(a, y, z.view(), gamma));
    }
    Ok(SolverOutput { x: z, objective })
}

fn check_dims<S: Scalar>(a: ArrayView2<S>, y: ArrayView1<S>) -> Result<()> {
    if a.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "operator has {} rows but observation has length {}",
            a.nrows(),
            y.len()
        )));
    }
    Ok(())
}
