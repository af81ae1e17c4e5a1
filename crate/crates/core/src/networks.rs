//! NTK-parameterised LISTA, ADMM-CSNet and the matched feed-forward network,
//! with batched forward passes and hand-written reverse-mode derivatives.
//!
//! All three share one layer shape: the pre-activation of layer `l` is
//! `W1 y / sqrt(n) + W2 h / sqrt(m)`, where either block may be absent.
//! LISTA feeds `h = x^{l-1}`, ADMM-CSNet feeds `h = z^{l-1} - u^{l-1}`
//! and adds `u^{l-1}` before the nonlinearity, and the FFNN has only `W1`
//! in its first layer (its `sqrt(m/n) y` input absorbs into the scaling)
//! and only `W2` afterwards.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::activation::SmoothThreshold;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed::{self, stream};

/// Default cap on `m * P` entries for a materialised Jacobian.
pub const JACOBIAN_BUDGET: usize = 1 << 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Lista,
    Admm,
    Ffnn,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::Lista, Arch::Admm, Arch::Ffnn];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Lista => "lista",
            Arch::Admm => "admm",
            Arch::Ffnn => "ffnn",
        }
    }

    pub fn is_unfolded(self) -> bool {
        !matches!(self, Arch::Ffnn)
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lista" => Ok(Arch::Lista),
            "admm" | "admm-csnet" | "admm_csnet" => Ok(Arch::Admm),
            "ffnn" => Ok(Arch::Ffnn),
            other => Err(Error::config("arch", format!("unknown architecture '{other}'"))),
        }
    }
}

/// Trainable parameter count.
pub fn param_count(arch: Arch, depth: usize, m: usize, n: usize) -> usize {
    match arch {
        Arch::Lista | Arch::Admm => depth * (m * n + m * m),
        Arch::Ffnn => m * n + depth.saturating_sub(1) * m * m,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<S> {
    /// `m x n`, applied to the observation.
    pub w1: Option<Array2<S>>,
    /// `m x m`, applied to the previous state.
    pub w2: Option<Array2<S>>,
}

/// Starting state shared by all samples: `x^0` for LISTA, `(z^0, u^0)`
/// for ADMM-CSNet. The FFNN ignores it.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialState<S> {
    pub x0: Array1<S>,
    pub u0: Array1<S>,
}

impl<S: Scalar> InitialState<S> {
    pub fn zeros(m: usize) -> Self {
        Self {
            x0: Array1::zeros(m),
            u0: Array1::zeros(m),
        }
    }

    /// Largest entry magnitude across both vectors.
    pub fn sup_norm(&self) -> S {
        self.x0
            .iter()
            .chain(self.u0.iter())
            .fold(S::zero(), |acc, v| acc.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<S> {
    pub arch: Arch,
    pub m: usize,
    pub n: usize,
    pub act: SmoothThreshold<S>,
    pub layers: Vec<Layer<S>>,
}

/// Per-layer values kept from a batched forward pass. Column `b` of every
/// matrix belongs to sample `b`.
#[derive(Debug, Clone)]
pub struct Trace<S> {
    pub arch: Arch,
    pub m: usize,
    pub n: usize,
    pub y: Array2<S>,
    /// `x~^l` (LISTA, FFNN) or `z~^l = x^l + u^{l-1}` (ADMM).
    pub pre: Vec<Array2<S>>,
    /// `x^l` or `z^l`.
    pub act: Vec<Array2<S>>,
    /// Input to `W2` of each layer; `None` when the layer has no `W2`.
    pub state_in: Vec<Option<Array2<S>>>,
    /// ADMM only: `u^l` and the affine `x^l`.
    pub dual: Vec<Array2<S>>,
    pub affine: Vec<Array2<S>>,
    /// `m x B` outputs.
    pub output: Array2<S>,
}

impl<S: Scalar> Trace<S> {
    pub fn samples(&self) -> usize {
        self.y.ncols()
    }

    pub fn depth(&self) -> usize {
        self.pre.len()
    }
}

fn inv_sqrt<S: Scalar>(k: usize) -> S {
    S::one() / S::of_usize(k).sqrt()
}

fn gaussian<S: Scalar>(rows: usize, cols: usize, rng: &mut impl rand::Rng) -> Array2<S> {
    Array2::from_shape_simple_fn((rows, cols), || S::of(StandardNormal.sample(rng)))
}

impl<S: Scalar> Network<S> {
    /// Zero weights with the block layout of `arch`.
    pub fn zeros(arch: Arch, depth: usize, m: usize, n: usize, act: SmoothThreshold<S>) -> Result<Self> {
        Self::build(arch, depth, m, n, act, |r, c| Array2::zeros((r, c)))
    }

    /// Every entry i.i.d. standard normal, drawn in flattening order.
    pub fn init_gaussian(arch: Arch, depth: usize, m: usize, n: usize, act: SmoothThreshold<S>, seed: u64) -> Result<Self> {
        let mut rng = seed::rng(seed, stream::WEIGHTS, 0);
        Self::build(arch, depth, m, n, act, |r, c| gaussian(r, c, &mut rng))
    }

    fn build(
        arch: Arch,
        depth: usize,
        m: usize,
        n: usize,
        act: SmoothThreshold<S>,
        mut fill: impl FnMut(usize, usize) -> Array2<S>,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Dimension("network needs at least one layer".into()));
        }
        if m == 0 || n == 0 {
            return Err(Error::Dimension(format!("network needs m, n >= 1, got m = {m}, n = {n}")));
        }
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let (has1, has2) = match arch {
                Arch::Lista | Arch::Admm => (true, true),
                Arch::Ffnn => (l == 0, l > 0),
            };
            let w1 = has1.then(|| fill(m, n));
            let w2 = has2.then(|| fill(m, m));
            layers.push(Layer { w1, w2 });
        }
        Ok(Self { arch, m, n, act, layers })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn param_count(&self) -> usize {
        param_count(self.arch, self.depth(), self.m, self.n)
    }

    /// Weight blocks in flattening order: by layer, `W1` before `W2`.
    pub fn blocks(&self) -> impl Iterator<Item = &Array2<S>> {
        self.layers.iter().flat_map(|l| l.w1.iter().chain(l.w2.iter()))
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut Array2<S>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.w1.iter_mut().chain(l.w2.iter_mut()))
    }

    pub fn flatten(&self) -> Array1<S> {
        let mut w = Vec::with_capacity(self.param_count());
        for b in self.blocks() {
            w.extend(b.iter().copied());
        }
        Array1::from(w)
    }

    pub fn set_flat(&mut self, w: ArrayView1<S>) -> Result<()> {
        if w.len() != self.param_count() {
            return Err(Error::Dimension(format!(
                "flat parameter vector has length {}, expected {}",
                w.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for b in self.blocks_mut() {
            let len = b.len();
            let src = w.slice(s![off..off + len]);
            for (dst, v) in b.iter_mut().zip(src.iter()) {
                *dst = *v;
            }
            off += len;
        }
        Ok(())
    }

    pub fn with_flat(&self, w: ArrayView1<S>) -> Result<Self> {
        let mut out = self.clone();
        out.set_flat(w)?;
        Ok(out)
    }

    /// `w <- w + alpha * d` for a flat direction `d`.
    pub fn axpy(&mut self, alpha: S, d: ArrayView1<S>) -> Result<()> {
        if d.len() != self.param_count() {
            return Err(Error::Dimension(format!(
                "direction has length {}, expected {}",
                d.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for b in self.blocks_mut() {
            let len = b.len();
            let src = d.slice(s![off..off + len]);
            for (dst, v) in b.iter_mut().zip(src.iter()) {
                *dst += alpha * *v;
            }
            off += len;
        }
        Ok(())
    }

    fn check_input(&self, y: ArrayView2<S>, init: &InitialState<S>) -> Result<()> {
        if y.nrows() != self.n {
            return Err(Error::Dimension(format!(
                "observation has {} rows, network expects n = {}",
                y.nrows(),
                self.n
            )));
        }
        if y.ncols() == 0 {
            return Err(Error::Dimension("forward pass needs at least one sample".into()));
        }
        if init.x0.len() != self.m || init.u0.len() != self.m {
            return Err(Error::Dimension(format!(
                "initial state must have length m = {}",
                self.m
            )));
        }
        Ok(())
    }

    /// Batched forward pass over the columns of `y` (`n x B`).
    pub fn forward(&self, y: ArrayView2<S>, init: &InitialState<S>) -> Result<Trace<S>> {
        self.check_input(y, init)?;
        let b = y.ncols();
        let depth = self.depth();
        let c_n = inv_sqrt::<S>(self.n);
        let c_m = inv_sqrt::<S>(self.m);
        let broadcast = |v: &Array1<S>| -> Array2<S> {
            v.broadcast((b, self.m)).expect("broadcast").t().to_owned()
        };

        let mut tr = Trace {
            arch: self.arch,
            m: self.m,
            n: self.n,
            y: y.to_owned(),
            pre: Vec::with_capacity(depth),
            act: Vec::with_capacity(depth),
            state_in: Vec::with_capacity(depth),
            dual: Vec::new(),
            affine: Vec::new(),
            output: Array2::zeros((0, 0)),
        };

        let mut state = broadcast(&init.x0);
        let mut dual = broadcast(&init.u0);
        for (l, layer) in self.layers.iter().enumerate() {
            let mut g = Array2::<S>::zeros((self.m, b));
            if let Some(w1) = &layer.w1 {
                ndarray::linalg::general_mat_mul(c_n, w1, &y, S::one(), &mut g);
            }
            let h = layer.w2.as_ref().map(|_| match self.arch {
                Arch::Admm => &state - &dual,
                _ => state.clone(),
            });
            if let (Some(w2), Some(h)) = (&layer.w2, &h) {
                ndarray::linalg::general_mat_mul(c_m, w2, h, S::one(), &mut g);
            }
            let pre = match self.arch {
                Arch::Admm => &g + &dual,
                _ => g.clone(),
            };
            let mut a = pre.clone();
            self.act.apply_inplace(&mut a);
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { layer: l + 1 });
            }
            if self.arch == Arch::Admm {
                let u = &dual + &g - &a;
                tr.affine.push(g);
                tr.dual.push(u.clone());
                dual = u;
            }
            tr.pre.push(pre);
            tr.state_in.push(h);
            state = a.clone();
            tr.act.push(a);
        }
        tr.output = state * c_m;
        Ok(tr)
    }

    pub fn forward_one(&self, y: ArrayView1<S>, init: &InitialState<S>) -> Result<Trace<S>> {
        let col = y.insert_axis(Axis(1));
        self.forward(col, init)
    }

    /// Network outputs only, `m x B`.
    pub fn predict(&self, y: ArrayView2<S>, init: &InitialState<S>) -> Result<Array2<S>> {
        Ok(self.forward(y, init)?.output)
    }

    fn check_trace(&self, tr: &Trace<S>) -> Result<()> {
        if tr.arch != self.arch || tr.m != self.m || tr.n != self.n || tr.depth() != self.depth() {
            return Err(Error::Contract(format!(
                "trace for {} (m={}, n={}, L={}) used with {} (m={}, n={}, L={})",
                tr.arch,
                tr.m,
                tr.n,
                tr.depth(),
                self.arch,
                self.m,
                self.n,
                self.depth()
            )));
        }
        Ok(())
    }

    /// Reverse pass for a batch of output cotangents. Column `c` of `seed`
    /// is a cotangent of the output of sample `cols[c]` (or sample `c` when
    /// `cols` is `None`). Returns, per layer, the cotangent of that layer's
    /// affine pre-activation `W1 y / sqrt(n) + W2 h / sqrt(m)`.
    pub fn backward(&self, tr: &Trace<S>, seed: ArrayView2<S>, cols: Option<&[usize]>) -> Result<Vec<Array2<S>>> {
        self.check_trace(tr)?;
        let width = cols.map_or(tr.samples(), |c| c.len());
        if seed.nrows() != self.m || seed.ncols() != width {
            return Err(Error::Contract(format!(
                "cotangent is {}x{}, expected {}x{}",
                seed.nrows(),
                seed.ncols(),
                self.m,
                width
            )));
        }
        if let Some(c) = cols {
            if c.iter().any(|&i| i >= tr.samples()) {
                return Err(Error::Contract("column map points past the trace".into()));
            }
        }
        let pick = |a: &Array2<S>| -> Array2<S> {
            match cols {
                Some(c) => a.select(Axis(1), c),
                None => a.clone(),
            }
        };
        let c_m = inv_sqrt::<S>(self.m);
        let depth = self.depth();
        let mut out = vec![Array2::<S>::zeros((0, 0)); depth];

        match self.arch {
            Arch::Lista | Arch::Ffnn => {
                let mut g = seed.to_owned() * c_m;
                for l in (0..depth).rev() {
                    let mut d = pick(&tr.pre[l]);
                    Zip::from(&mut d).and(&g).for_each(|p, &gv| *p = self.act.slope(*p) * gv);
                    if l > 0 {
                        let w2 = self.layers[l].w2.as_ref().expect("hidden layer has W2");
                        g = w2.t().dot(&d) * c_m;
                    }
                    out[l] = d;
                }
            }
            Arch::Admm => {
                let mut a_z = seed.to_owned() * c_m;
                let mut a_u = Array2::<S>::zeros(a_z.raw_dim());
                for l in (0..depth).rev() {
                    let mut d = pick(&tr.pre[l]);
                    Zip::from(&mut d)
                        .and(&a_z)
                        .and(&a_u)
                        .for_each(|p, &az, &au| *p = self.act.slope(*p) * (az - au));
                    let a_x = d + &a_u;
                    if l > 0 {
                        let w2 = self.layers[l].w2.as_ref().expect("unfolded layer has W2");
                        let t = w2.t().dot(&a_x) * c_m;
                        a_u = &a_x - &t;
                        a_z = t;
                    }
                    out[l] = a_x;
                }
            }
        }
        Ok(out)
    }

    /// Inputs feeding each block of layer `l`, with their scale factors,
    /// in flattening order.
    fn block_inputs<'a>(&self, tr: &'a Trace<S>, l: usize) -> Vec<(&'a Array2<S>, S)> {
        let layer = &self.layers[l];
        let mut v = Vec::with_capacity(2);
        if layer.w1.is_some() {
            v.push((&tr.y, inv_sqrt::<S>(self.n)));
        }
        if layer.w2.is_some() {
            v.push((tr.state_in[l].as_ref().expect("state input recorded"), inv_sqrt::<S>(self.m)));
        }
        v
    }

    /// `sum_b v_b^T (d f_b / d w)` for cotangents `v` (`m x B`).
    pub fn vjp(&self, tr: &Trace<S>, v: ArrayView2<S>) -> Result<Array1<S>> {
        let adj = self.backward(tr, v, None)?;
        let mut grad = Vec::with_capacity(self.param_count());
        for (l, d) in adj.iter().enumerate() {
            for (input, c) in self.block_inputs(tr, l) {
                let g = d.dot(&input.t()) * c;
                grad.extend(g.iter().copied());
            }
        }
        Ok(Array1::from(grad))
    }

    /// Jacobian `d f / d w` (`m x P`) of a single sample.
    pub fn jacobian(&self, y: ArrayView1<S>, init: &InitialState<S>) -> Result<Array2<S>> {
        self.jacobian_with_budget(y, init, JACOBIAN_BUDGET)
    }

    pub fn jacobian_with_budget(&self, y: ArrayView1<S>, init: &InitialState<S>, budget: usize) -> Result<Array2<S>> {
        let p = self.param_count();
        let size = self.m.saturating_mul(p);
        if size > budget {
            return Err(Error::Budget {
                what: "jacobian entries",
                value: size,
                budget,
            });
        }
        let tr = self.forward_one(y, init)?;
        let eye = Array2::<S>::eye(self.m);
        let cols = vec![0usize; self.m];
        let adj = self.backward(&tr, eye.view(), Some(&cols))?;
        let mut jac = Array2::<S>::zeros((self.m, p));
        for s in 0..self.m {
            let mut off = 0;
            let mut row = jac.row_mut(s);
            for (l, d) in adj.iter().enumerate() {
                for (input, c) in self.block_inputs(&tr, l) {
                    let x = input.column(0);
                    for i in 0..self.m {
                        let di = d[[i, s]] * c;
                        let mut seg = row.slice_mut(s![off..off + x.len()]);
                        seg.zip_mut_with(&x, |r, &xv| *r = di * xv);
                        off += x.len();
                    }
                }
            }
        }
        Ok(jac)
    }

    /// `b_s^l = d f_s / d g^l` for every output coordinate `s` at once,
    /// where `g^l` is the layer activation. Entry `l` of the result is the
    /// `m x m` matrix whose column `s` is `b_s^{l+1}`.
    ///
    /// LISTA and FFNN use the exact recursion `b^{l-1} = W^l^T S'^l b^l / sqrt(m)`.
    /// ADMM-CSNet uses `b^{l-1} = ((2 / sqrt(m)) W2^l^T - I) S'^l b^l`, the
    /// recursion along the `z` path only.
    pub fn layer_sensitivity(&self, tr: &Trace<S>, sample: usize) -> Result<Vec<Array2<S>>> {
        self.check_trace(tr)?;
        if sample >= tr.samples() {
            return Err(Error::Contract(format!("sample {sample} not in trace")));
        }
        let depth = self.depth();
        let c_m = inv_sqrt::<S>(self.m);
        let mut out = vec![Array2::<S>::zeros((0, 0)); depth];
        let mut b = Array2::<S>::eye(self.m) * c_m;
        for l in (0..depth).rev() {
            out[l] = b.clone();
            if l == 0 {
                break;
            }
            let slope = tr.pre[l].column(sample).mapv(|p| self.act.slope(p));
            let sb = &b * &slope.insert_axis(Axis(1));
            let w2 = self.layers[l].w2.as_ref().expect("hidden layer has W2");
            b = match self.arch {
                Arch::Admm => w2.t().dot(&sb) * (S::of(2.0) * c_m) - &sb,
                _ => w2.t().dot(&sb) * c_m,
            };
        }
        Ok(out)
    }
}

/// Spectral-norm caps `(c10 sqrt(n), c20 sqrt(m))` that Gaussian `W1` and
/// `W2` blocks satisfy at initialisation with high probability, where
/// `c10 = 1 + 2 sqrt(m / n)` and `c20 = 3`.
pub fn weight_norm_caps(m: usize, n: usize) -> (f64, f64) {
    let (m, n) = (m as f64, n as f64);
    ((1.0 + 2.0 * m.sqrt() / n.sqrt()) * n.sqrt(), 3.0 * m.sqrt())
}

/// Largest `||W1^l|| / cap1` and `||W2^l|| / cap2` over layers (100 power
/// iterations at tolerance 1e-8); both at most 1 means every block is inside
/// its cap.
pub fn weight_norm_ratios<S: Scalar>(net: &Network<S>) -> (f64, f64) {
    let (cap1, cap2) = weight_norm_caps(net.m, net.n);
    let worst = |blocks: Vec<&Array2<S>>, cap: f64| {
        blocks
            .into_iter()
            .map(|w| crate::linalg::spectral_norm(w.view(), 100, 1e-8).as_f64() / cap)
            .fold(0.0, f64::max)
    };
    (
        worst(net.layers.iter().filter_map(|l| l.w1.as_ref()).collect(), cap1),
        worst(net.layers.iter().filter_map(|l| l.w2.as_ref()).collect(), cap2),
    )
}

/// Constants entering the hidden-layer norm caps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HiddenCapInputs {
    /// `max |y_i|`.
    pub c_y: f64,
    /// Sup norms of the initial state and dual.
    pub c_x: f64,
    pub c_u: f64,
    /// Frobenius radii around the initial `W1` and `W2`.
    pub r1: f64,
    pub r2: f64,
    pub lipschitz: f64,
    pub sigma_at_zero: f64,
}

impl HiddenCapInputs {
    /// Zero radii and unit Lipschitz constant at the given input.
    pub fn at_init<S: Scalar>(y: ArrayView1<S>, init: &InitialState<S>, act: &SmoothThreshold<S>) -> Self {
        HiddenCapInputs {
            c_y: y.iter().fold(0.0, |a, v| a.max(v.as_f64().abs())),
            c_x: init.x0.iter().fold(0.0, |a, v| a.max(v.as_f64().abs())),
            c_u: init.u0.iter().fold(0.0, |a, v| a.max(v.as_f64().abs())),
            r1: 0.0,
            r2: 0.0,
            lipschitz: 1.0,
            sigma_at_zero: act.value(S::zero()).as_f64(),
        }
    }
}

/// Caps on `||x^l||` (LISTA) or on `||z^l||` and `||u^l||` (ADMM-CSNet) for
/// `l = 0..=depth`. `dual` is empty for LISTA.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenCaps {
    pub state: Vec<f64>,
    pub dual: Vec<f64>,
}

pub fn hidden_norm_caps(arch: Arch, depth: usize, m: usize, n: usize, k: &HiddenCapInputs) -> Result<HiddenCaps> {
    let (c10, c20) = {
        let (a, b) = weight_norm_caps(m, n);
        (a / (n as f64).sqrt(), b / (m as f64).sqrt())
    };
    let sm = (m as f64).sqrt();
    let a1 = (c10 + k.r1 / (n as f64).sqrt()) * (n as f64).sqrt() * k.c_y;
    let a2 = c20 + k.r2 / sm;
    let ls = k.lipschitz;
    match arch {
        Arch::Lista => {
            let mut x = vec![sm * k.c_x];
            for l in 1..=depth {
                x.push(ls * a1 + ls * a2 * x[l - 1] + k.sigma_at_zero);
            }
            Ok(HiddenCaps { state: x, dual: Vec::new() })
        }
        Arch::Admm => {
            let mut z = vec![sm * k.c_x];
            let mut u = vec![sm * k.c_u];
            for l in 1..=depth {
                let zl = ls * a1 + ls * a2 * z[l - 1] + ls * (1.0 + a2) * u[l - 1] + k.sigma_at_zero;
                let ul = a1 + a2 * z[l - 1] + (a2 + 1.0) * u[l - 1] + zl;
                z.push(zl);
                u.push(ul);
            }
            Ok(HiddenCaps { state: z, dual: u })
        }
        Arch::Ffnn => Err(Error::Domain("hidden-layer caps are defined for the unfolded networks only".into())),
    }
}

/// Whether every hidden state (and ADMM dual) of the forward pass at `y`
/// stays inside its cap.
pub fn hidden_norms_within_caps<S: Scalar>(net: &Network<S>, y: ArrayView1<S>, init: &InitialState<S>) -> Result<bool> {
    let caps = hidden_norm_caps(net.arch, net.depth(), net.m, net.n, &HiddenCapInputs::at_init(y, init, &net.act))?;
    let tr = net.forward_one(y, init)?;
    let col_norm = |a: &Array2<S>| crate::linalg::norm(a.column(0)).as_f64();
    let states_ok = tr.act.iter().zip(&caps.state[1..]).all(|(a, &c)| col_norm(a) <= c);
    let duals_ok = tr.dual.iter().zip(caps.dual.iter().skip(1)).all(|(u, &c)| col_norm(u) <= c);
    Ok(states_ok && duals_ok)
}
