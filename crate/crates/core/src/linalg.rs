//! Small dense linear-algebra kernels: power iteration, Cholesky, and the
//! two symmetric eigen-solver paths used for tangent-kernel spectra.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed;

pub fn norm<S: Scalar>(v: ArrayView1<S>) -> S {
    v.dot(&v).sqrt()
}

pub fn norm_inf<S: Scalar>(v: ArrayView1<S>) -> S {
    v.iter().fold(S::zero(), |acc, x| acc.max(x.abs()))
}

pub fn frobenius<S: Scalar>(a: ArrayView2<S>) -> S {
    a.iter().map(|&x| x * x).sum::<S>().sqrt()
}

fn unit_probe<S: Scalar>(dim: usize, seed_value: u64) -> Array1<S> {
    let mut rng = seed::rng(seed_value, seed::stream::PROBE, dim as u64);
    let mut v: Array1<S> =
        Array1::from_shape_fn(dim, |_| S::of(StandardNormal.sample(&mut rng)));
    let n = norm(v.view());
    v /= n;
    v
}

/// Spectral norm by power iteration on `A^T A`.
///
/// Stops when the relative change of the estimate falls below `tol`.
pub fn spectral_norm<S: Scalar>(a: ArrayView2<S>, iters: usize, tol: f64) -> S {
    let (rows, cols) = a.dim();
    if rows == 0 || cols == 0 {
        return S::zero();
    }
    let mut v = unit_probe::<S>(cols, 0x5eed);
    let mut est = S::zero();
    for _ in 0..iters {
        let av = a.dot(&v);
        let mut w = a.t().dot(&av);
        let nw = norm(w.view());
        if nw == S::zero() {
            return S::zero();
        }
        let next = nw.sqrt();
        w /= nw;
        v = w;
        let done = (next - est).abs().as_f64() <= tol * next.as_f64();
        est = next;
        if done {
            break;
        }
    }
    // ||A v|| for the final unit vector is a certified lower bound.
    norm(a.dot(&v).view())
}

/// Largest eigenvalue magnitude of a symmetric operator given as a closure.
pub fn power_iteration<S, F>(dim: usize, mut apply: F, iters: usize, tol: f64) -> (S, usize)
where
    S: Scalar,
    F: FnMut(&Array1<S>) -> Array1<S>,
{
    let mut v = unit_probe::<S>(dim, 0xfeed);
    let mut est = S::zero();
    for it in 0..iters {
        let w = apply(&v);
        let nw = norm(w.view());
        if nw == S::zero() {
            return (S::zero(), it + 1);
        }
        let done = it > 0 && (nw - est).abs().as_f64() <= tol * nw.as_f64();
        est = nw;
        v = w / nw;
        if done {
            return (est, it + 1);
        }
    }
    (est, iters)
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky<S: Scalar>(a: ArrayView2<S>) -> Result<Array2<S>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension(format!("cholesky of {}x{}", n, a.ncols())));
    }
    let mut l = Array2::<S>::zeros((n, n));
    for j in 0..n {
        let row_j = l.row(j).slice(ndarray::s![..j]).to_owned();
        let d = a[[j, j]] - row_j.dot(&row_j);
        if d <= S::zero() || !d.is_finite() {
            return Err(Error::Factorization(format!(
                "matrix not positive definite at pivot {j} ({d})"
            )));
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in (j + 1)..n {
            let s = l.row(i).slice(ndarray::s![..j]).dot(&row_j);
            l[[i, j]] = (a[[i, j]] - s) / d;
        }
    }
    Ok(l)
}

/// Solves `L L^T x = b` given the lower factor.
pub fn cholesky_solve<S: Scalar>(l: ArrayView2<S>, b: ArrayView1<S>) -> Array1<S> {
    let n = l.nrows();
    let mut y = b.to_owned();
    for i in 0..n {
        let s = l.row(i).slice(ndarray::s![..i]).dot(&y.slice(ndarray::s![..i]));
        y[i] = (y[i] - s) / l[[i, i]];
    }
    for i in (0..n).rev() {
        let s = l
            .column(i)
            .slice(ndarray::s![i + 1..])
            .dot(&y.slice(ndarray::s![i + 1..]));
        y[i] = (y[i] - s) / l[[i, i]];
    }
    y
}

fn to_nalgebra<S: Scalar>(a: ArrayView2<S>) -> DMatrix<f64> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r, c, |i, j| a[[i, j]].as_f64())
}

/// All eigenvalues of a symmetric matrix, ascending, from a dense solver.
pub fn sym_eigenvalues<S: Scalar>(a: ArrayView2<S>) -> Vec<f64> {
    let mut ev: Vec<f64> = to_nalgebra(a).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

/// Smallest eigenpair from a full dense decomposition.
pub fn sym_min_eigenpair_dense<S: Scalar>(a: ArrayView2<S>) -> (f64, Array1<f64>) {
    let eig = SymmetricEigen::new(to_nalgebra(a));
    let (idx, &lam) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .expect("non-empty matrix");
    let v = eig.eigenvectors.column(idx);
    (lam, Array1::from_iter(v.iter().copied()))
}

/// Result of the shift-invert Lanczos path.
#[derive(Debug, Clone)]
pub struct LanczosMin {
    pub lambda_min: f64,
    pub vector: Array1<f64>,
    pub steps: usize,
}

/// Smallest eigenpair by Lanczos on `(A - shift I)^{-1}` with full
/// reorthogonalisation. `shift` must lie strictly below the spectrum.
pub fn lanczos_min_shift_invert(
    a: ArrayView2<f64>,
    shift: f64,
    max_steps: usize,
    tol: f64,
) -> Result<LanczosMin> {
    let n = a.nrows();
    let mut shifted = a.to_owned();
    for i in 0..n {
        shifted[[i, i]] -= shift;
    }
    let l = cholesky(shifted.view())?;
    let apply = |v: &Array1<f64>| cholesky_solve(l.view(), v.view());

    let steps_cap = max_steps.min(n).max(1);
    let mut basis: Vec<Array1<f64>> = Vec::with_capacity(steps_cap);
    let mut alpha = Vec::with_capacity(steps_cap);
    let mut beta: Vec<f64> = Vec::with_capacity(steps_cap);
    let mut q = unit_probe::<f64>(n, 0x1a2c);
    let mut best = f64::NAN;
    let mut best_vec = q.clone();
    for step in 0..steps_cap {
        basis.push(q.clone());
        let mut w = apply(&q);
        let a_k = q.dot(&w);
        alpha.push(a_k);
        // full reorthogonalisation, applied twice for stability
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&w);
                w.scaled_add(-c, b);
            }
        }
        let b_k = norm(w.view());

        let k = alpha.len();
        let t = DMatrix::from_fn(k, k, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j {
                beta[i]
            } else if j + 1 == i {
                beta[j]
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(t);
        let (idx, &theta) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(y.1))
            .expect("non-empty");
        let last = eig.eigenvectors[(k - 1, idx)];
        let ritz_residual = (b_k * last).abs();
        let lam = shift + 1.0 / theta;
        let converged = ritz_residual <= tol * theta.abs() || b_k <= 1e-14 * theta.abs();
        if converged || step + 1 == steps_cap {
            let mut v = Array1::<f64>::zeros(n);
            for (j, b) in basis.iter().enumerate() {
                v.scaled_add(eig.eigenvectors[(j, idx)], b);
            }
            let nv = norm(v.view());
            v /= nv;
            best = lam;
            best_vec = v;
            if converged {
                return Ok(LanczosMin {
                    lambda_min: lam,
                    vector: best_vec,
                    steps: step + 1,
                });
            }
        }
        beta.push(b_k);
        q = w / b_k;
    }
    // The Krylov space spans everything once the step count reaches n.
    if steps_cap == n {
        Ok(LanczosMin {
            lambda_min: best,
            vector: best_vec,
            steps: steps_cap,
        })
    } else {
        Err(Error::Spectral {
            iters: steps_cap,
            estimate: best,
        })
    }
}

/// `||A v - lambda v||`.
pub fn eigen_residual(a: ArrayView2<f64>, lambda: f64, v: ArrayView1<f64>) -> f64 {
    let mut r = a.dot(&v);
    r.scaled_add(-lambda, &v);
    norm(r.view())
}

pub fn max_abs_asymmetry<S: Scalar>(a: ArrayView2<S>) -> S {
    let mut worst = S::zero();
    for (i, row) in a.axis_iter(Axis(0)).enumerate() {
        for (j, &v) in row.iter().enumerate().skip(i + 1) {
            worst = worst.max((v - a[[j, i]]).abs());
        }
    }
    worst
}
