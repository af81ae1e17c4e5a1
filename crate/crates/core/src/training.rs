//! Full-batch gradient descent and mini-batch SGD on the squared loss
//! `0.5 * sum_i ||f_i - x_i||^2`, with checkpoint records for the PL*
//! and convergence-envelope checks.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{self, KERNEL_BUDGET};
use crate::linalg;
use crate::networks::{InitialState, Network};
use crate::problem::Dataset;
use crate::scalar::Scalar;
use crate::seed::{self, stream};

/// Loss ratio to the initial loss beyond which a run counts as diverged.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub eta: f64,
    pub epochs: usize,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub record_every: usize,
    /// Assemble `K(w_t)` every `10 * record_every` epochs.
    pub track_kernel: bool,
    /// Stop once `loss / T` drops to this value.
    pub target_mse: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 0.1,
            epochs: 1000,
            batch_size: None,
            seed: 0,
            record_every: 10,
            track_kernel: false,
            target_mse: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, t: usize) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::config("eta", format!("must be positive, got {}", self.eta)));
        }
        if self.record_every == 0 {
            return Err(Error::config("record_every", "must be at least 1"));
        }
        if let Some(b) = self.batch_size {
            if b == 0 || b > t {
                return Err(Error::config(
                    "batch_size",
                    format!("must lie in [1, T = {t}], got {b}"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    pub loss: f64,
    pub grad_norm_sq: f64,
    pub dist_from_init: f64,
    pub lambda_min: Option<f64>,
    /// `r^T K(w_t) r` for the residual `r = F(w_t) - X`, when the kernel is tracked.
    pub residual_kernel_form: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Epochs,
    ZeroLoss,
    TargetReached,
    NonFinite,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<S> {
    pub net: Network<S>,
    pub records: Vec<TrainRecord>,
    pub stop: StopReason,
    pub epochs_run: usize,
}

impl<S> TrainOutcome<S> {
    pub fn final_loss(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.loss)
    }
}

/// `0.5 ||F(w) - X||_F^2`.
pub fn loss<S: Scalar>(net: &Network<S>, data: &Dataset<S>, init: &InitialState<S>) -> Result<f64> {
    let f = net.predict(data.y.view(), init)?;
    Ok(half_sq(&(f - &data.x)))
}

fn half_sq<S: Scalar>(r: &Array2<S>) -> f64 {
    0.5 * r.iter().map(|v| v.as_f64().powi(2)).sum::<f64>()
}

/// Loss and `sum_i J_i^T (f_i - x_i)`.
pub fn full_gradient<S: Scalar>(net: &Network<S>, data: &Dataset<S>, init: &InitialState<S>) -> Result<(f64, Array1<S>)> {
    let tr = net.forward(data.y.view(), init)?;
    let r = &tr.output - &data.x;
    let g = net.vjp(&tr, r.view())?;
    Ok((half_sq(&r), g))
}

/// Mean squared error per sample, `loss / T`.
pub fn mse(loss_value: f64, t: usize) -> f64 {
    loss_value / t as f64
}

/// `1 / (L_F^2 + beta_F ||F(w0) - X||_F)` with `||F(w0) - X||_F = sqrt(2 loss0)`.
pub fn theoretical_step_size(lipschitz: f64, smoothness: f64, loss0: f64) -> Result<f64> {
    if !(lipschitz > 0.0) || smoothness < 0.0 || loss0 < 0.0 {
        return Err(Error::Domain(format!(
            "step-size bound needs L_F > 0, beta_F >= 0, loss >= 0 (got {lipschitz}, {smoothness}, {loss0})"
        )));
    }
    Ok(1.0 / (lipschitz * lipschitz + smoothness * (2.0 * loss0).sqrt()))
}

fn record<S: Scalar>(
    net: &Network<S>,
    w0: &Array1<S>,
    data: &Dataset<S>,
    init: &InitialState<S>,
    epoch: usize,
    with_kernel: bool,
) -> Result<TrainRecord> {
    let tr = net.forward(data.y.view(), init)?;
    let r = &tr.output - &data.x;
    let g = net.vjp(&tr, r.view())?;
    let dist = linalg::norm((&net.flatten() - w0).view()).as_f64();
    let (lambda_min, form) = if with_kernel {
        let k = kernel::assemble_structured(net, data.y.view(), init, KERNEL_BUDGET)?;
        let e = kernel::min_eigenvalue(&k)?;
        (Some(e.lambda_min), Some(k.quadratic_form(r.view())))
    } else {
        (None, None)
    };
    Ok(TrainRecord {
        epoch,
        loss: half_sq(&r),
        grad_norm_sq: g.iter().map(|v| v.as_f64().powi(2)).sum(),
        dist_from_init: dist,
        lambda_min,
        residual_kernel_form: form,
    })
}

/// Full-batch gradient descent.
pub fn gd_train<S: Scalar>(net0: &Network<S>, data: &Dataset<S>, init: &InitialState<S>, cfg: &TrainConfig) -> Result<TrainOutcome<S>> {
    train(net0, data, init, &TrainConfig { batch_size: None, ..cfg.clone() })
}

/// Mini-batch SGD: every epoch reshuffles the samples with a seeded RNG and
/// walks the partition; each batch gradient is scaled by `T / |batch|`.
pub fn sgd_train<S: Scalar>(net0: &Network<S>, data: &Dataset<S>, init: &InitialState<S>, cfg: &TrainConfig) -> Result<TrainOutcome<S>> {
    train(net0, data, init, cfg)
}

fn sgd_epoch<S: Scalar>(
    net: &mut Network<S>,
    data: &Dataset<S>,
    init: &InitialState<S>,
    order: &[usize],
    batch: usize,
    eta: S,
) -> Result<()> {
    let scale = S::of_usize(data.len());
    for chunk in order.chunks(batch) {
        let mut idx = chunk.to_vec();
        idx.sort_unstable();
        let sub = data.select(&idx);
        let tr = net.forward(sub.y.view(), init)?;
        let r = &tr.output - &sub.x;
        let g = net.vjp(&tr, r.view())?;
        net.axpy(-eta * scale / S::of_usize(idx.len()), g.view())?;
    }
    Ok(())
}

fn train<S: Scalar>(net0: &Network<S>, data: &Dataset<S>, init: &InitialState<S>, cfg: &TrainConfig) -> Result<TrainOutcome<S>> {
    let t = data.len();
    cfg.validate(t)?;
    let batch = cfg.batch_size.unwrap_or(t);
    let eta = S::of(cfg.eta);
    let mut net = net0.clone();
    let w0 = net.flatten();
    let kernel_every = cfg.record_every * 10;

    let first = record(&net, &w0, data, init, 0, cfg.track_kernel)?;
    let limit = DIVERGENCE_FACTOR * first.loss;
    let mut records = vec![first];
    let done = |loss: f64| -> Option<StopReason> {
        if !loss.is_finite() {
            Some(StopReason::NonFinite)
        } else if loss <= 1e-12 {
            Some(StopReason::ZeroLoss)
        } else if cfg.target_mse.is_some_and(|m| mse(loss, t) <= m) {
            Some(StopReason::TargetReached)
        } else {
            None
        }
    };
    if let Some(stop) = done(records[0].loss) {
        return Ok(TrainOutcome {
            net,
            records,
            stop,
            epochs_run: 0,
        });
    }

    let mut order: Vec<usize> = (0..t).collect();
    let full = batch == t;
    for epoch in 1..=cfg.epochs {
        let stepped = if full {
            full_gradient(&net, data, init).and_then(|(_, g)| net.axpy(-eta, g.view()))
        } else {
            let mut rng = seed::rng(cfg.seed, stream::SHUFFLE, epoch as u64);
            order.shuffle(&mut rng);
            sgd_epoch(&mut net, data, init, &order, batch, eta)
        };
        match stepped {
            Ok(()) => {}
            Err(Error::NonFinite { .. }) => {
                return Ok(TrainOutcome {
                    net,
                    records,
                    stop: StopReason::NonFinite,
                    epochs_run: epoch,
                })
            }
            Err(e) => return Err(e),
        }

        let last = epoch == cfg.epochs;
        if epoch % cfg.record_every == 0 || last {
            let with_kernel = cfg.track_kernel && epoch % kernel_every == 0;
            let rec = match record(&net, &w0, data, init, epoch, with_kernel) {
                Ok(r) => r,
                Err(Error::NonFinite { .. }) => {
                    return Ok(TrainOutcome {
                        net,
                        records,
                        stop: StopReason::NonFinite,
                        epochs_run: epoch,
                    })
                }
                Err(e) => return Err(e),
            };
            let loss_now = rec.loss;
            if loss_now > limit {
                return Err(Error::Divergence {
                    epoch,
                    loss: loss_now,
                    limit,
                    records,
                });
            }
            records.push(rec);
            if let Some(stop) = done(loss_now) {
                return Ok(TrainOutcome {
                    net,
                    records,
                    stop,
                    epochs_run: epoch,
                });
            }
        }
    }
    Ok(TrainOutcome {
        net,
        records,
        stop: StopReason::Epochs,
        epochs_run: cfg.epochs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeVerdict {
    pub fraction: f64,
    pub pass: bool,
}

/// Share of checkpoints with `L(w_t) <= (1 - eta mu)^t L(w_0)`, measured
/// from the first record; passes at 95%.
pub fn convergence_envelope(records: &[TrainRecord], mu: f64, eta: f64) -> Result<EnvelopeVerdict> {
    let first = records
        .first()
        .ok_or_else(|| Error::Domain("envelope check needs at least one record".into()))?;
    let rate = eta * mu;
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::Domain(format!("need 0 < eta * mu < 1, got {rate}")));
    }
    let ok = records
        .iter()
        .filter(|r| {
            let steps = (r.epoch - first.epoch) as f64;
            r.loss <= (1.0 - rate).powf(steps) * first.loss * (1.0 + 1e-12)
        })
        .count();
    let fraction = ok as f64 / records.len() as f64;
    Ok(EnvelopeVerdict {
        fraction,
        pass: fraction >= 0.95,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusVerdict {
    pub max_dist: f64,
    pub radius: f64,
    pub pass: bool,
}

/// Whether every checkpoint stayed inside `B(w0, R)`.
pub fn radius_check(records: &[TrainRecord], radius: f64) -> Result<RadiusVerdict> {
    if radius < 0.0 || radius.is_nan() {
        return Err(Error::Domain(format!("radius must be nonnegative, got {radius}")));
    }
    let max_dist = records.iter().fold(0.0f64, |a, r| a.max(r.dist_from_init));
    Ok(RadiusVerdict {
        max_dist,
        radius,
        pass: max_dist <= radius,
    })
}

/// Column-wise mean absolute error between predictions and targets.
pub fn mean_absolute_error<S: Scalar>(net: &Network<S>, data: &Dataset<S>, init: &InitialState<S>) -> Result<f64> {
    let f = net.predict(data.y.view(), init)?;
    let total: f64 = (f - &data.x).iter().map(|v| v.as_f64().abs()).sum();
    Ok(total / data.x.len_of(Axis(1)) as f64 / data.m() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::SmoothThreshold;
    use crate::networks::Arch;
    use crate::problem::LinearInverseProblem;
    use ndarray::array;
    use rand_distr::{Distribution, StandardNormal};

    fn small(arch: Arch, seed_value: u64) -> (Network<f64>, Dataset<f64>) {
        let p = LinearInverseProblem::<f64>::generate(4, 8, 2, 10.0, 10.0, seed_value).unwrap();
        let d = p.gen_dataset(3, seed_value).unwrap();
        let net = Network::init_gaussian(arch, 2, 8, 4, SmoothThreshold::default(), seed_value).unwrap();
        (net, d)
    }

    #[test]
    fn loss_cases() {
        let net = Network::<f64>::zeros(Arch::Lista, 1, 3, 2, SmoothThreshold::default()).unwrap();
        let d = Dataset::new(array![[1.0], [2.0]], array![[1.0], [0.0], [0.0]]).unwrap();
        let init = InitialState::zeros(3);
        assert_eq!(loss(&net, &d, &init).unwrap(), 0.5);
        let hit = Dataset::new(d.y.clone(), Array2::zeros((3, 1))).unwrap();
        assert_eq!(loss(&net, &hit, &init).unwrap(), 0.0);
        let (_, g) = full_gradient(&net, &hit, &init).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn loss_matches_independent_sum() {
        let (net, d) = small(Arch::Admm, 3);
        let init = InitialState::zeros(8);
        let mut want = 0.0;
        for i in 0..d.len() {
            let tr = net.forward_one(d.y.column(i), &init).unwrap();
            for s in 0..8 {
                want += 0.5 * (tr.output[[s, 0]] - d.x[[s, i]]).powi(2);
            }
        }
        assert!((loss(&net, &d, &init).unwrap() - want).abs() <= 1e-14 * want);
    }

    #[test]
    fn gradient_matches_directional_difference() {
        for arch in Arch::ALL {
            let (net, d) = small(arch, 5);
            let init = InitialState::zeros(8);
            let (_, g) = full_gradient(&net, &d, &init).unwrap();
            let mut rng = seed::rng(9, stream::PROBE, 0);
            let dir: Array1<f64> = Array1::from_shape_simple_fn(g.len(), || StandardNormal.sample(&mut rng));
            let h = 1e-6;
            let mut p = net.clone();
            p.axpy(h, dir.view()).unwrap();
            let mut q = net.clone();
            q.axpy(-h, dir.view()).unwrap();
            let fd = (loss(&p, &d, &init).unwrap() - loss(&q, &d, &init).unwrap()) / (2.0 * h);
            let an = g.dot(&dir);
            assert!((fd - an).abs() <= 1e-5 * an.abs(), "{arch}: {fd} vs {an}");
        }
    }

    #[test]
    fn gradient_norm_is_kernel_form() {
        for arch in Arch::ALL {
            let (net, d) = small(arch, 7);
            let init = InitialState::zeros(8);
            let rec = record(&net, &net.flatten(), &d, &init, 0, true).unwrap();
            let form = rec.residual_kernel_form.unwrap();
            assert!((rec.grad_norm_sq - form).abs() <= 1e-10 * form, "{arch}");
        }
    }

    #[test]
    fn step_size_plug_in() {
        assert_eq!(theoretical_step_size(1.0, 0.0, 0.0).unwrap(), 1.0);
        assert_eq!(theoretical_step_size(2.0, 1.0, 8.0).unwrap(), 0.125);
        assert!(theoretical_step_size(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn zero_loss_stops_immediately() {
        let net = Network::<f64>::zeros(Arch::Lista, 2, 3, 2, SmoothThreshold::default()).unwrap();
        let d = Dataset::new(array![[1.0], [2.0]], Array2::zeros((3, 1))).unwrap();
        let out = gd_train(&net, &d, &InitialState::zeros(3), &TrainConfig::default()).unwrap();
        assert_eq!(out.stop, StopReason::ZeroLoss);
        assert_eq!(out.net, net);
        assert_eq!(out.records.len(), 1);
    }

    #[test]
    fn linear_model_follows_closed_form_steps() {
        // One FFNN layer with identity activation is f = W Y / sqrt(m n); GD
        // on W is W <- W - eta (W Y / c - X) Y^T / c with c = sqrt(m n).
        let (m, n) = (3, 2);
        let act = SmoothThreshold::new(0.0).unwrap();
        let net = Network::<f64>::init_gaussian(Arch::Ffnn, 1, m, n, act, 1).unwrap();
        let d = Dataset::new(array![[1.0, 0.5], [-0.3, 2.0]], array![[0.2, 0.0], [0.0, -0.4], [1.0, 0.3]]).unwrap();
        let cfg = TrainConfig {
            eta: 0.3,
            epochs: 7,
            record_every: 1,
            ..TrainConfig::default()
        };
        let out = gd_train(&net, &d, &InitialState::zeros(m), &cfg).unwrap();
        let c = ((m * n) as f64).sqrt();
        let mut w = net.layers[0].w1.clone().unwrap();
        for _ in 0..7 {
            let r = w.dot(&d.y) / c - &d.x;
            w = &w - &(r.dot(&d.y.t()) * (0.3 / c));
        }
        let got = out.net.layers[0].w1.as_ref().unwrap();
        assert!((got - &w).iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn full_batch_sgd_is_gd() {
        let (net, d) = small(Arch::Lista, 2);
        let init = InitialState::zeros(8);
        let cfg = TrainConfig {
            eta: 0.05,
            epochs: 20,
            seed: 4,
            record_every: 5,
            ..TrainConfig::default()
        };
        let gd = gd_train(&net, &d, &init, &cfg).unwrap();
        let sgd = sgd_train(&net, &d, &init, &TrainConfig { batch_size: Some(3), ..cfg.clone() }).unwrap();
        assert_eq!(gd.net, sgd.net);
        assert_eq!(gd.records, sgd.records);
    }

    #[test]
    fn sgd_is_deterministic() {
        let (net, d) = small(Arch::Admm, 2);
        let init = InitialState::zeros(8);
        let cfg = TrainConfig {
            eta: 0.05,
            epochs: 15,
            batch_size: Some(1),
            seed: 4,
            record_every: 5,
            ..TrainConfig::default()
        };
        let a = sgd_train(&net, &d, &init, &cfg).unwrap();
        let b = sgd_train(&net, &d, &init, &cfg).unwrap();
        assert_eq!(a.final_loss().to_bits(), b.final_loss().to_bits());
        let c = sgd_train(&net, &d, &init, &TrainConfig { seed: 5, ..cfg }).unwrap();
        assert_ne!(a.net, c.net);
    }

    #[test]
    fn divergence_carries_prefix() {
        let (net, d) = small(Arch::Ffnn, 1);
        let cfg = TrainConfig {
            eta: 1e4,
            epochs: 50,
            record_every: 1,
            ..TrainConfig::default()
        };
        match gd_train(&net, &d, &InitialState::zeros(8), &cfg) {
            Err(Error::Divergence { records, .. }) => assert!(!records.is_empty()),
            Ok(o) => assert_eq!(o.stop, StopReason::NonFinite),
            Err(e) => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn bad_batch_rejected() {
        let (net, d) = small(Arch::Lista, 1);
        let cfg = TrainConfig {
            batch_size: Some(4),
            ..TrainConfig::default()
        };
        assert!(matches!(
            sgd_train(&net, &d, &InitialState::zeros(8), &cfg),
            Err(Error::Config { .. })
        ));
    }

    fn rec(epoch: usize, loss: f64, dist: f64) -> TrainRecord {
        TrainRecord {
            epoch,
            loss,
            grad_norm_sq: 0.0,
            dist_from_init: dist,
            lambda_min: None,
            residual_kernel_form: None,
        }
    }

    #[test]
    fn envelope_cases() {
        let zeros: Vec<_> = (0..5).map(|t| rec(t, 0.0, 0.0)).collect();
        assert!(convergence_envelope(&zeros, 0.5, 0.1).unwrap().pass);
        let geo: Vec<_> = (0..50).map(|t| rec(t, 3.0 * 0.95f64.powi(t as i32), 0.0)).collect();
        let v = convergence_envelope(&geo, 0.5, 0.1).unwrap();
        assert_eq!(v.fraction, 1.0);
        assert!(convergence_envelope(&[], 0.5, 0.1).is_err());
        assert!(convergence_envelope(&geo, 20.0, 0.1).is_err());
    }

    #[test]
    fn envelope_fails_with_overstated_margin() {
        // GD on 0.5 * a * w^2 has loss (1 - eta a)^{2t} L0; kernel value is a.
        let (a, eta) = (0.2f64, 0.5f64);
        let recs: Vec<_> = (0..40).map(|t| rec(t, (1.0 - eta * a).powi(2 * t as i32), 0.0)).collect();
        assert!(convergence_envelope(&recs, a, eta).unwrap().pass);
        assert!(!convergence_envelope(&recs, 1.9, eta).unwrap().pass);
    }

    #[test]
    fn radius_cases() {
        let still = vec![rec(0, 1.0, 0.0), rec(1, 1.0, 0.0)];
        assert!(radius_check(&still, 1e-9).unwrap().pass);
        let moved = vec![rec(0, 1.0, 0.0), rec(1, 0.5, 0.2)];
        assert!(!radius_check(&moved, 0.0).unwrap().pass);
        assert!(radius_check(&moved, -1.0).is_err());
    }
}
