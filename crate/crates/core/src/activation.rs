//! Smooth soft-thresholding and the classic shrinkage operator.
//!
//! The smooth threshold is the difference of two softplus terms,
//! `sigma(x) = softplus(x - lambda) - softplus(-x - lambda)`. It is odd,
//! vanishes at the origin, reduces to the identity for `lambda = 0` and
//! approaches the hard shrinkage `S_lambda` away from the dead zone.

use ndarray::{ArrayBase, DataMut, Dimension};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `max(z, 0) + log1p(exp(-|z|))`; never overflows.
#[inline]
pub fn softplus<S: Scalar>(z: S) -> S {
    z.max(S::zero()) + (-z.abs()).exp().ln_1p()
}

/// Logistic function evaluated without overflow on either tail.
#[inline]
pub fn logistic<S: Scalar>(z: S) -> S {
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}

/// Derivative of the logistic function, `e^{-|z|} / (1 + e^{-|z|})^2`.
#[inline]
pub fn logistic_slope<S: Scalar>(z: S) -> S {
    let e = (-z.abs()).exp();
    let d = S::one() + e;
    e / (d * d)
}

/// Shrinkage `sign(x) * max(|x| - lambda, 0)`.
#[inline]
pub fn hard_threshold<S: Scalar>(x: S, lambda: S) -> S {
    let mag = (x.abs() - lambda).max(S::zero());
    if x < S::zero() {
        -mag
    } else {
        mag
    }
}

/// Smooth soft-thresholding nonlinearity with a fixed threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothThreshold<S> {
    lambda: S,
}

impl<S: Scalar> Default for SmoothThreshold<S> {
    fn default() -> Self {
        Self { lambda: S::one() }
    }
}

impl<S: Scalar> SmoothThreshold<S> {
    pub fn new(lambda: S) -> Result<Self> {
        if !lambda.is_finite() || lambda < S::zero() {
            return Err(Error::Domain(format!(
                "threshold must be finite and nonnegative, got {lambda}"
            )));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> S {
        self.lambda
    }

    /// Unchecked evaluation used on hot paths; NaN propagates.
    #[inline]
    pub fn value(&self, x: S) -> S {
        if self.lambda == S::zero() {
            return x;
        }
        let r = x.abs();
        let a = r - self.lambda;
        let b = -r - self.lambda;
        let v = if a <= S::zero() {
            // e^a - e^b written as e^a (1 - e^{-2r}) keeps small |x| exact
            let num = a.exp() * -(-(r + r)).exp_m1();
            (num / (S::one() + b.exp())).ln_1p()
        } else {
            softplus(a) - softplus(b)
        };
        if x < S::zero() {
            -v
        } else {
            v
        }
    }

    #[inline]
    pub fn slope(&self, x: S) -> S {
        if self.lambda == S::zero() {
            return S::one();
        }
        logistic(x - self.lambda) + logistic(-x - self.lambda)
    }

    #[inline]
    pub fn curvature(&self, x: S) -> S {
        if self.lambda == S::zero() {
            return S::zero();
        }
        logistic_slope(x - self.lambda) - logistic_slope(-x - self.lambda)
    }

    pub fn eval(&self, x: S) -> Result<S> {
        finite(x)?;
        Ok(self.value(x))
    }

    pub fn deriv1(&self, x: S) -> Result<S> {
        finite(x)?;
        Ok(self.slope(x))
    }

    pub fn deriv2(&self, x: S) -> Result<S> {
        finite(x)?;
        Ok(self.curvature(x))
    }

    /// Certified global Lipschitz and smoothness constants `(L_sigma, beta_sigma)`.
    ///
    /// `sigma'` is a sum of two logistic values whose total stays below one
    /// and tends to one as `|x|` grows; `sigma''` is a difference of two
    /// logistic slopes, each in `[0, 1/4]`.
    pub fn lipschitz_constants(&self) -> (S, S) {
        (S::one(), S::of(0.25))
    }

    pub fn apply_inplace<D, Sd>(&self, a: &mut ArrayBase<Sd, D>)
    where
        D: Dimension,
        Sd: DataMut<Elem = S>,
    {
        a.mapv_inplace(|v| self.value(v));
    }
}

fn finite<S: Scalar>(x: S) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("non-finite activation input {x}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    fn act(l: f64) -> SmoothThreshold<f64> {
        SmoothThreshold::new(l).unwrap()
    }

    #[test]
    fn origin_and_identity() {
        assert_eq!(act(5.0).eval(0.0).unwrap(), 0.0);
        for &x in &[-700.0, -3.5, -1e-9, 0.0, 2.25, 40.0, 1e8] {
            assert_eq!(act(0.0).eval(x).unwrap(), x);
        }
    }

    #[test]
    fn reference_value_at_ten() {
        // softplus(5) - softplus(-15) from a 50-digit evaluation.
        let expected = 5.006_715_042_586_844_4;
        assert!(rel(act(5.0).eval(10.0).unwrap(), expected) < 1e-15);
        // log1p(e^-1 (1 - e^-2e-9) / (1 + e^-1)) from the same oracle
        let small = 5.378_828_427_399_902_6e-10;
        assert!(rel(act(1.0).eval(1e-9).unwrap(), small) < 1e-14);
        assert!(rel(act(1.0).eval(0.5).unwrap(), 0.272_663_706_197_354_27) < 1e-14);
    }

    #[test]
    fn derivative_references() {
        let t = act(1.0);
        // s(2) + s(-4)
        let expected = 0.898_783_287_939_974;
        assert!(rel(t.deriv1(3.0).unwrap(), expected) < 1e-14);
        for &l in &[0.5, 1.0, 5.0] {
            let t = act(l);
            assert!(rel(t.deriv1(0.0).unwrap(), 2.0 / (1.0 + l.exp())) < 1e-14);
            assert_eq!(t.deriv2(0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn shrinkage() {
        assert_eq!(hard_threshold(0.5, 1.0), 0.0);
        assert_eq!(hard_threshold(3.0, 1.0), 2.0);
        assert_eq!(hard_threshold(-3.0, 1.0), -2.0);
        assert_eq!(hard_threshold(-1.0, 1.0), 0.0);
    }

    #[test]
    fn rejects_non_finite() {
        let t = act(1.0);
        assert!(t.eval(f64::NAN).is_err());
        assert!(t.deriv1(f64::INFINITY).is_err());
        assert!(t.deriv2(f64::NEG_INFINITY).is_err());
        assert!(SmoothThreshold::new(-1.0).is_err());
        assert!(SmoothThreshold::new(f64::NAN).is_err());
    }

    #[test]
    fn finite_differences_match_derivatives() {
        for &l in &[0.0, 1.0, 5.0] {
            let t = act(l);
            let mut x = -50.0f64;
            while x <= 50.0 {
                let h = 1e-5 * (1.0 + x.abs());
                let fd1 = (t.value(x + h) - t.value(x - h)) / (2.0 * h);
                let d1 = t.slope(x);
                assert!((fd1 - d1).abs() <= 1e-6 * d1.abs().max(1e-3), "d1 at {x}, l={l}");
                let fd2 = (t.slope(x + h) - t.slope(x - h)) / (2.0 * h);
                let d2 = t.curvature(x);
                assert!((fd2 - d2).abs() <= 1e-4 * d2.abs().max(1e-3), "d2 at {x}, l={l}");
                x += 0.173;
            }
        }
    }

    #[test]
    fn constants_bound_dense_grid() {
        for &l in &[0.0, 1.0, 5.0] {
            let t = act(l);
            let (lip, beta) = t.lipschitz_constants();
            let mut sup1 = 0.0f64;
            let mut sup2 = 0.0f64;
            let mut x = -60.0f64;
            while x <= 60.0 {
                sup1 = sup1.max(t.slope(x).abs());
                sup2 = sup2.max(t.curvature(x).abs());
                x += 1e-3;
            }
            assert!(sup1 <= lip && sup1 > 1.0 - 1e-12, "lambda={l}: {sup1}");
            assert!(sup2 <= beta, "lambda={l}: {sup2}");
            if l > 0.0 {
                assert!(t.slope(0.3) < 1.0 && t.slope(0.3) > 0.0);
            }
        }
        // identity map: difference quotient is exactly one
        let t = act(0.0);
        assert_eq!((t.value(3.0) - t.value(1.0)) / 2.0, 1.0);
    }

    #[test]
    fn tail_approaches_shrinkage() {
        let t = act(5.0);
        assert!((t.value(40.0) - hard_threshold(40.0, 5.0)).abs() <= 1e-10);
        assert!((t.value(-40.0) - hard_threshold(-40.0, 5.0)).abs() <= 1e-10);
    }

    #[test]
    fn no_overflow_far_out() {
        let t = act(1.0);
        for &x in &[1e8, -1e8, 710.0, -710.0, 1e300] {
            assert!(t.value(x).is_finite());
            assert!(t.slope(x).is_finite());
            assert!(t.curvature(x).is_finite());
        }
    }

    #[test]
    fn generic_over_f32() {
        let t = SmoothThreshold::<f32>::new(1.0).unwrap();
        let a = t.value(2.5f32) as f64;
        let b = act(1.0).value(2.5);
        assert!((a - b).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn odd_symmetry(x in -1e4f64..1e4, l in 0.0f64..10.0) {
            let t = act(l);
            prop_assert_eq!(t.value(-x), -t.value(x));
            prop_assert_eq!(t.slope(-x), t.slope(x));
        }

        #[test]
        fn slope_in_open_unit_interval(x in -1e3f64..1e3, l in 0.01f64..10.0) {
            let d = act(l).slope(x);
            prop_assert!(d > 0.0 && d <= 1.0);
            prop_assert!(act(l).curvature(x).abs() <= 0.25);
        }
    }
}
