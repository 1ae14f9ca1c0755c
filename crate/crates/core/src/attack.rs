//! WAAttack: C&W-driven iterative point updates with per-point gradient
//! weighting, look-ahead step-size adaptation and l-infinity projection.
//!
//! One iteration, from the current cloud `P'`:
//!
//! 1. loss `L` and input gradient `g` of the hinge at `P'`;
//! 2. weights `w_i = |g_i|_2 / (den(g) + xi)` (or all ones) and unit
//!    directions `n_i = g_i / |g_i|_2`;
//! 3. tentative cloud `p_i - eta * w_i * n_i`, clamped per coordinate into
//!    the budget around the original;
//! 4. with adaptive steps, `rho = (L - L_tentative) / (L_0 + xi)` picks the
//!    next step size (keep, amplify by `alpha` or attenuate by `beta`);
//! 5. the tentative cloud is committed.
//!
//! With weighting and adaptation both off this is exactly the classical
//! uniform update `p_i - eta * n_i`.

use std::str::FromStr;
use std::time::Instant;

use crate::classifier::{argmax, cw_loss, Classifier, GradientField};
use crate::cloud::{Point3, PointCloud};
use crate::metrics::{composite_distortion, DistortionReport, MetricWeights};
use crate::subattack::{self, Partition, PartitionStrategy, StepProposal};
use crate::{Error, Result, Scalar};

/// Norm used in the denominator of the point-wise weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DenominatorNorm {
    L1,
    L2,
    Linf,
}

impl DenominatorNorm {
    pub fn name(self) -> &'static str {
        match self {
            DenominatorNorm::L1 => "l1",
            DenominatorNorm::L2 => "l2",
            DenominatorNorm::Linf => "linf",
        }
    }
}

impl FromStr for DenominatorNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(DenominatorNorm::L1),
            "l2" => Ok(DenominatorNorm::L2),
            "linf" | "l-inf" | "inf" => Ok(DenominatorNorm::Linf),
            _ => Err(Error::invalid(format!("unknown weight denominator `{s}`"))),
        }
    }
}

/// Attack hyperparameters. `Default` gives the reference settings:
/// `epsilon = 0.16`, `eta0 = 0.007`, `t_max = 50`, `xi = 1e-8`, `c = 2`,
/// `alpha = 1.6`, `beta = 0.8`, `k = 4`, `lambda = 0.1`, weights `(1000, 100, 0.1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig<T> {
    pub epsilon: T,
    pub eta0: T,
    pub t_max: usize,
    pub kappa: T,
    pub xi: T,
    pub alpha: T,
    pub beta: T,
    pub c: T,
    pub weight_denominator: DenominatorNorm,
    pub enable_weighting: bool,
    pub enable_adaptive_step: bool,
    pub early_stop: bool,
    pub metric_weights: MetricWeights<T>,
    /// Number of subsets (SubAttack only).
    pub k: usize,
    /// Distortion trade-off in the combination score (SubAttack only).
    pub lambda: T,
    pub partition: PartitionStrategy,
    /// Cell size of the hash partition grid.
    pub hash_grid: T,
    /// Seed of the random partition.
    pub seed: u64,
}

impl<T: Scalar> Default for AttackConfig<T> {
    fn default() -> Self {
        Self {
            epsilon: T::of(0.16),
            eta0: T::of(0.007),
            t_max: 50,
            kappa: T::zero(),
            xi: T::of(1e-8),
            alpha: T::of(1.6),
            beta: T::of(0.8),
            c: T::of(2.0),
            weight_denominator: DenominatorNorm::Linf,
            enable_weighting: true,
            enable_adaptive_step: true,
            early_stop: true,
            metric_weights: MetricWeights::default(),
            k: 4,
            lambda: T::of(0.1),
            partition: PartitionStrategy::Random,
            hash_grid: T::of(1.0 / 16.0),
            seed: 0,
        }
    }
}

impl<T: Scalar> AttackConfig<T> {
    /// The classical uniform attack: no weighting, fixed step.
    pub fn baseline() -> Self {
        Self {
            enable_weighting: false,
            enable_adaptive_step: false,
            ..Self::default()
        }
    }

    /// `tau = c / t_max`.
    pub fn tau(&self) -> T {
        self.c / T::of(self.t_max.max(1) as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: T| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("epsilon", self.epsilon)?;
        positive("eta0", self.eta0)?;
        positive("xi", self.xi)?;
        positive("c", self.c)?;
        positive("hash_grid", self.hash_grid)?;
        if !(self.alpha > T::one()) || !self.alpha.is_finite() {
            return Err(Error::invalid(format!("alpha must exceed 1, got {}", self.alpha)));
        }
        if !(self.beta > T::zero() && self.beta < T::one()) {
            return Err(Error::invalid(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        if !(self.kappa >= T::zero()) || !self.kappa.is_finite() {
            return Err(Error::invalid(format!("kappa must be non-negative, got {}", self.kappa)));
        }
        if !(self.lambda >= T::zero()) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        self.metric_weights.validate()
    }
}

/// One committed iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord<T> {
    pub iteration: usize,
    /// Hinge loss at the start of the iteration.
    pub loss: T,
    /// Hinge loss of the committed (look-ahead) cloud.
    pub next_loss: T,
    /// Step size used in this iteration.
    pub eta: T,
    /// Relative progress, present when step adaptation is on.
    pub rho: Option<T>,
    /// Step size for the following iteration.
    pub next_eta: T,
    /// Candidate subset combinations scored (0 for WAAttack).
    pub candidates_scored: usize,
    pub points_moved: usize,
    /// `max |P' - P|` after the commit.
    pub linf: T,
    pub success: bool,
}

/// Borrowed state handed to an observer after every commit.
#[derive(Debug, Clone, Copy)]
pub struct IterationView<'a, T> {
    pub record: &'a IterationRecord<T>,
    pub before: &'a PointCloud<T>,
    pub after: &'a PointCloud<T>,
    /// Selection mask when the update was restricted to a subset combination.
    pub mask: Option<&'a [bool]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult<T> {
    pub adversarial: PointCloud<T>,
    /// Classifier argmax on `adversarial` differs from the true label.
    pub success: bool,
    pub predicted: usize,
    pub iterations_used: usize,
    /// First iteration count at which the cloud was misclassified.
    pub success_iteration: Option<usize>,
    pub final_step: T,
    pub distortion: DistortionReport<T>,
    pub wall_time: f64,
    pub trace: Vec<IterationRecord<T>>,
}

impl<T: Scalar> AttackResult<T> {
    /// Equality of everything except the wall time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        let mut a = self.clone();
        a.wall_time = other.wall_time;
        &a == other
    }
}

/// `w_i = |g_i|_2 / (den + xi)` with `den` the chosen norm of the flattened field.
pub fn point_weights<T: Scalar>(grad: &GradientField<T>, xi: T, norm: DenominatorNorm) -> Vec<T> {
    let flat = grad.0.iter().flatten();
    let den = match norm {
        DenominatorNorm::Linf => flat.fold(T::zero(), |m, v| m.max(v.abs())),
        DenominatorNorm::L1 => flat.fold(T::zero(), |s, v| s + v.abs()),
        DenominatorNorm::L2 => flat.fold(T::zero(), |s, v| s + *v * *v).sqrt(),
    };
    let den = den + xi;
    (0..grad.len()).map(|i| grad.point_norm(i) / den).collect()
}

/// `rho = (loss_t - loss_next) / (loss_0 + xi)`.
pub fn relative_progress<T: Scalar>(loss_t: T, loss_next: T, loss_0: T, xi: T) -> T {
    (loss_t - loss_next) / (loss_0 + xi)
}

/// Keeps `eta` when `rho > tau`, amplifies by `alpha` when `0 < rho <= tau`,
/// attenuates by `beta` otherwise.
pub fn adapt_step<T: Scalar>(eta: T, rho: T, tau: T, alpha: T, beta: T) -> T {
    if rho > tau {
        eta
    } else if rho > T::zero() {
        alpha * eta
    } else {
        beta * eta
    }
}

/// Per-point unit gradient direction; points with `|g_i| <= xi` get zero.
pub fn direction_field<T: Scalar>(grad: &GradientField<T>, xi: T) -> Vec<Point3<T>> {
    (0..grad.len())
        .map(|i| {
            let norm = grad.point_norm(i);
            if norm > xi {
                grad.0[i].map(|v| v / norm)
            } else {
                [T::zero(); 3]
            }
        })
        .collect()
}

/// Moves one point by `-eta * weight * direction` and clamps every
/// coordinate's offset from `orig` into `[-epsilon, epsilon]`. Coordinates
/// already inside the budget are kept bit-exact.
#[inline]
pub(crate) fn update_point<T: Scalar>(
    cur: &Point3<T>,
    orig: &Point3<T>,
    eta: T,
    weight: T,
    dir: &Point3<T>,
    epsilon: T,
) -> Point3<T> {
    let scale = eta * weight;
    let mut out = *cur;
    for k in 0..3 {
        let v = cur[k] - scale * dir[k];
        let d = v - orig[k];
        out[k] = if d > epsilon {
            orig[k] + epsilon
        } else if d < -epsilon {
            orig[k] - epsilon
        } else {
            v
        };
    }
    out
}

/// Applies the (optionally masked) weighted update and projects onto the budget.
/// Points with `mask[i] == false` are returned unchanged.
pub fn apply_update<T: Scalar>(
    current: &PointCloud<T>,
    original: &PointCloud<T>,
    eta: T,
    weights: &[T],
    directions: &[Point3<T>],
    mask: Option<&[bool]>,
    epsilon: T,
) -> Result<PointCloud<T>> {
    let n = current.len();
    if original.len() != n || weights.len() != n || directions.len() != n || mask.is_some_and(|m| m.len() != n) {
        return Err(Error::invalid("apply_update inputs must all have the cloud's length"));
    }
    let points = current
        .points()
        .iter()
        .zip(original.points())
        .enumerate()
        .map(|(i, (c, o))| {
            if mask.is_some_and(|m| !m[i]) {
                *c
            } else {
                update_point(c, o, eta, weights[i], &directions[i], epsilon)
            }
        })
        .collect();
    Ok(PointCloud::from_parts(points, current.label()))
}

fn require_label<T: Scalar>(model: &Classifier<T>, cloud: &PointCloud<T>) -> Result<usize> {
    let label = cloud
        .label()
        .ok_or_else(|| Error::invalid("attack needs a labeled cloud"))?;
    if label >= model.num_classes() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            model.num_classes()
        )));
    }
    Ok(label)
}

fn unmoved_result<T: Scalar>(cloud: &PointCloud<T>, success: bool, predicted: usize, eta: T, start: Instant) -> AttackResult<T> {
    AttackResult {
        adversarial: cloud.clone(),
        success,
        predicted,
        iterations_used: 0,
        success_iteration: success.then_some(0),
        final_step: eta,
        distortion: DistortionReport::zero(),
        wall_time: start.elapsed().as_secs_f64(),
        trace: Vec::new(),
    }
}

/// Shared iteration driver. With a partition, every update is restricted to
/// the best-scoring subset combination.
pub(crate) fn drive<T: Scalar, F>(
    model: &Classifier<T>,
    cloud: &PointCloud<T>,
    config: &AttackConfig<T>,
    partition: Option<&Partition>,
    observer: &mut F,
) -> Result<AttackResult<T>>
where
    F: FnMut(IterationView<'_, T>),
{
    let start = Instant::now();
    config.validate()?;
    let label = require_label(model, cloud)?;
    let original = cloud;
    let initial = model.predict(original);
    if initial != label {
        return Ok(unmoved_result(original, true, initial, config.eta0, start));
    }
    if config.t_max == 0 {
        return Ok(unmoved_result(original, false, initial, config.eta0, start));
    }

    let n = original.len();
    let tau = config.tau();
    let mut eta = config.eta0;
    let mut loss0: Option<T> = None;
    let mut current = original.clone();
    let mut trace = Vec::with_capacity(config.t_max);
    let mut best: Option<(PointCloud<T>, DistortionReport<T>, usize)> = None;
    let mut success_iteration = None;

    for t in 0..config.t_max {
        let (loss, grad, _) = model.loss_and_gradient(&current, label, config.kappa);
        let loss0 = *loss0.get_or_insert(loss);
        let weights = if config.enable_weighting {
            point_weights(&grad, config.xi, config.weight_denominator)
        } else {
            vec![T::one(); n]
        };
        let directions = direction_field(&grad, config.xi);

        let (next, next_logits, mask, candidates) = match partition {
            None => {
                let next = apply_update(&current, original, eta, &weights, &directions, None, config.epsilon)?;
                let logits = model.forward(&next);
                (next, logits, None, 0)
            }
            Some(partition) => {
                let step = StepProposal {
                    eta,
                    weights: &weights,
                    directions: &directions,
                };
                let ctx = subattack::CandidateContext {
                    model,
                    original,
                    current: &current,
                    label,
                    kappa: config.kappa,
                    epsilon: config.epsilon,
                    step,
                    lambda: config.lambda,
                    metric_weights: config.metric_weights,
                };
                let selection = subattack::select_best_combination(&ctx, partition)?;
                let next = apply_update(
                    &current,
                    original,
                    eta,
                    &weights,
                    &directions,
                    Some(&selection.mask),
                    config.epsilon,
                )?;
                (next, selection.logits, Some(selection.mask), selection.candidates_scored)
            }
        };

        let next_loss = cw_loss(&next_logits, label, config.kappa);
        let (rho, next_eta) = if config.enable_adaptive_step {
            let rho = relative_progress(loss, next_loss, loss0, config.xi);
            (Some(rho), adapt_step(eta, rho, tau, config.alpha, config.beta))
        } else {
            (None, eta)
        };
        let success = argmax(&next_logits) != label;
        let points_moved = next
            .points()
            .iter()
            .zip(current.points())
            .filter(|(a, b)| a != b)
            .count();
        let record = IterationRecord {
            iteration: t,
            loss,
            next_loss,
            eta,
            rho,
            next_eta,
            candidates_scored: candidates,
            points_moved,
            linf: next.linf_distance(original),
            success,
        };
        observer(IterationView {
            record: &record,
            before: &current,
            after: &next,
            mask: mask.as_deref(),
        });
        trace.push(record);
        current = next;
        eta = next_eta;

        if success {
            success_iteration.get_or_insert(t + 1);
            let report = composite_distortion(original, &current, &config.metric_weights)?;
            if best.as_ref().is_none_or(|(_, b, _)| report.d_composite < b.d_composite) {
                best = Some((current.clone(), report, t + 1));
            }
            if config.early_stop {
                break;
            }
        }
    }

    let iterations_used = trace.len();
    let (adversarial, distortion) = match best {
        Some((cloud, report, _)) => (cloud, report),
        None => {
            let report = composite_distortion(original, &current, &config.metric_weights)?;
            (current, report)
        }
    };
    let predicted = model.predict(&adversarial);
    Ok(AttackResult {
        success: predicted != label,
        predicted,
        adversarial,
        iterations_used,
        success_iteration,
        final_step: eta,
        distortion,
        wall_time: start.elapsed().as_secs_f64(),
        trace,
    })
}

/// Runs WAAttack (or, with weighting and adaptation disabled, the classical
/// uniform attack) on one labeled cloud.
pub fn run_waattack<T: Scalar>(model: &Classifier<T>, cloud: &PointCloud<T>, config: &AttackConfig<T>) -> Result<AttackResult<T>> {
    drive(model, cloud, config, None, &mut |_| {})
}

/// [`run_waattack`] with a callback after every committed iteration.
pub fn run_waattack_observed<T: Scalar, F>(
    model: &Classifier<T>,
    cloud: &PointCloud<T>,
    config: &AttackConfig<T>,
    mut observer: F,
) -> Result<AttackResult<T>>
where
    F: FnMut(IterationView<'_, T>),
{
    drive(model, cloud, config, None, &mut observer)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(points: &[[f64; 3]]) -> GradientField<f64> {
        GradientField(points.to_vec())
    }

    #[test]
    fn weights_of_zero_field() {
        let w = point_weights(&GradientField::<f64>::zeros(4), 1e-8, DenominatorNorm::Linf);
        assert_eq!(w, vec![0.0; 4]);
    }

    #[test]
    fn weights_single_point() {
        let g = field(&[[3.0, 4.0, 0.0], [0.0; 3], [0.0; 3]]);
        let w = point_weights(&g, 1e-8, DenominatorNorm::Linf);
        assert!((w[0] - 5.0 / (4.0 + 1e-8)).abs() < 1e-12);
        assert!((w[0] - 1.25).abs() < 1e-8);
        assert_eq!(&w[1..], &[0.0, 0.0]);
    }

    #[test]
    fn weights_uniform_field_exceed_one() {
        let g = field(&[[0.5; 3]; 5]);
        let w = point_weights(&g, 1e-8, DenominatorNorm::Linf);
        for v in w {
            assert!((v - 3f64.sqrt() * 0.5 / (0.5 + 1e-8)).abs() < 1e-12);
            assert!((v - 1.732).abs() < 1e-3);
        }
    }

    #[test]
    fn weight_denominators() {
        let g = field(&[[3.0, 4.0, 0.0], [0.0, 0.0, -12.0]]);
        let xi = 1e-8;
        let l1 = point_weights(&g, xi, DenominatorNorm::L1);
        let l2 = point_weights(&g, xi, DenominatorNorm::L2);
        assert!((l1[0] - 5.0 / (19.0 + xi)).abs() < 1e-12);
        assert!((l2[1] - 12.0 / (13.0 + xi)).abs() < 1e-12);
    }

    #[test]
    fn relative_progress_examples() {
        assert_eq!(relative_progress(5.0f64, 5.0, 10.0, 1e-8), 0.0);
        assert!((relative_progress(5.0f64, 4.0, 10.0, 0.0) - 0.1).abs() < 1e-12);
        assert!((relative_progress(5.0f64, 6.0, 10.0, 0.0) + 0.1).abs() < 1e-12);
        assert!((relative_progress(5.0f64, 4.0, 10.0, 1e-8) - 1.0 / (10.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn adapt_step_branches() {
        let tau = 2.0 / 50.0;
        assert_eq!(adapt_step(0.007f64, 0.1, tau, 1.6, 0.8), 0.007);
        assert!((adapt_step(0.007f64, 0.02, tau, 1.6, 0.8) - 0.0112).abs() < 1e-12);
        assert!((adapt_step(0.007f64, -0.01, tau, 1.6, 0.8) - 0.0056).abs() < 1e-12);
        // rho == tau amplifies, rho == 0 attenuates.
        assert!((adapt_step(0.007f64, tau, tau, 1.6, 0.8) - 0.0112).abs() < 1e-12);
        assert!((adapt_step(0.007f64, 0.0, tau, 1.6, 0.8) - 0.0056).abs() < 1e-12);
    }

    #[test]
    fn direction_examples() {
        let d = direction_field(&field(&[[0.0, 0.0, 2.0], [0.0; 3], [1.0, -2.0, 2.0]]), 1e-8);
        assert_eq!(d[0], [0.0, 0.0, 1.0]);
        assert_eq!(d[1], [0.0; 3]);
        let n: f64 = d[2].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn update_clamps_to_budget() {
        let orig = PointCloud::<f64>::new(vec![[0.0, 0.0, 0.0], [0.1, 0.1, 0.1]], Some(0)).unwrap();
        let cur = PointCloud::<f64>::new(vec![[0.15, 0.0, -0.1], [0.1, 0.1, 0.1]], Some(0)).unwrap();
        let dirs = vec![[-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let next = apply_update(&cur, &orig, 0.05, &[1.0, 1.0], &dirs, None, 0.16).unwrap();
        assert_eq!(next.points()[0], [0.16, 0.0, -0.1]);
        assert!((next.points()[1][2] - 0.05).abs() < 1e-15);
        let masked = apply_update(&cur, &orig, 0.05, &[1.0, 1.0], &dirs, Some(&[false, true]), 0.16).unwrap();
        assert_eq!(masked.points()[0], cur.points()[0]);
        let zero = apply_update(&cur, &orig, 0.05, &[1.0, 1.0], &[[0.0; 3]; 2], None, 0.16).unwrap();
        assert_eq!(zero, cur);
    }

    #[test]
    fn config_validation() {
        assert!(AttackConfig::<f64>::default().validate().is_ok());
        let bad = [
            AttackConfig { alpha: 1.0, ..AttackConfig::<f64>::default() },
            AttackConfig { beta: 1.0, ..AttackConfig::default() },
            AttackConfig { epsilon: 0.0, ..AttackConfig::default() },
            AttackConfig { xi: 0.0, ..AttackConfig::default() },
            AttackConfig { k: 0, ..AttackConfig::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        assert!((AttackConfig::<f64>::default().tau() - 0.04).abs() < 1e-15);
    }

    #[test]
    fn denominator_names_parse() {
        for d in [DenominatorNorm::L1, DenominatorNorm::L2, DenominatorNorm::Linf] {
            assert_eq!(d.name().parse::<DenominatorNorm>().unwrap(), d);
        }
        assert!("l3".parse::<DenominatorNorm>().is_err());
    }
}
