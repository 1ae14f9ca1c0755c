//! Geometric distortion between an adversarial cloud and its original.
//!
//! Conventions: Chamfer averages squared nearest-neighbour distances in each
//! direction and symmetrizes with a factor of one half; Hausdorff is one-sided
//! (adversarial to original) and also squared; the l2 term is the plain
//! Euclidean norm of the stacked `3N` perturbation entries.
//!
//! All scans are brute-force `O(N * M)` and sum in index order. The cached
//! candidate evaluator in [`crate::subattack`] relies on that order to
//! reproduce these values bit for bit.

use crate::cloud::{PointCloud, Perturbation, Point3, sq_dist};
use crate::{Error, Result, Scalar};

/// Squared distance from `p` to its nearest neighbour in `set`.
#[inline]
pub(crate) fn nearest_sq<T: Scalar>(p: &Point3<T>, set: &[Point3<T>]) -> T {
    set.iter().map(|q| sq_dist(p, q)).fold(T::infinity(), T::min)
}

fn directed_mean<T: Scalar>(from: &[Point3<T>], to: &[Point3<T>]) -> T {
    let mut sum = T::zero();
    for p in from {
        sum += nearest_sq(p, to);
    }
    sum / T::of(from.len() as f64)
}

fn require_points<T: Scalar>(a: &PointCloud<T>, b: &PointCloud<T>) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("distance metrics need non-empty clouds"));
    }
    Ok(())
}

/// Symmetric Chamfer distance with squared distances. `chamfer(a, b) == chamfer(b, a)` exactly.
pub fn chamfer<T: Scalar>(a: &PointCloud<T>, b: &PointCloud<T>) -> Result<T> {
    require_points(a, b)?;
    let ab = directed_mean(a.points(), b.points());
    let ba = directed_mean(b.points(), a.points());
    Ok(T::of(0.5) * (ab + ba))
}

/// One-sided squared Hausdorff distance from `adv` to `orig`.
pub fn hausdorff<T: Scalar>(adv: &PointCloud<T>, orig: &PointCloud<T>) -> Result<T> {
    require_points(adv, orig)?;
    Ok(adv
        .points()
        .iter()
        .map(|p| nearest_sq(p, orig.points()))
        .fold(T::zero(), T::max))
}

/// Euclidean norm over all `3N` perturbation entries.
pub fn l2_norm<T: Scalar>(delta: &Perturbation<T>) -> T {
    let mut sum = T::zero();
    for v in delta.deltas.iter().flatten() {
        sum += *v * *v;
    }
    sum.sqrt()
}

/// Positive weights of the composite distortion `w_c*D_c + w_h*D_h + w_l*D_l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricWeights<T> {
    pub chamfer: T,
    pub hausdorff: T,
    pub l2: T,
}

impl<T: Scalar> Default for MetricWeights<T> {
    fn default() -> Self {
        Self {
            chamfer: T::of(1000.0),
            hausdorff: T::of(100.0),
            l2: T::of(0.1),
        }
    }
}

impl<T: Scalar> MetricWeights<T> {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w_c", self.chamfer), ("w_h", self.hausdorff), ("w_l", self.l2)] {
            if !(w > T::zero()) || !w.is_finite() {
                return Err(Error::invalid(format!("distortion weight {name} must be positive, got {w}")));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn combine(&self, d_c: T, d_h: T, d_l: T) -> T {
        self.chamfer * d_c + self.hausdorff * d_h + self.l2 * d_l
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DistortionReport<T> {
    pub d_c: T,
    pub d_h: T,
    pub d_l: T,
    pub d_composite: T,
}

impl<T: Scalar> DistortionReport<T> {
    pub fn zero() -> Self {
        Self {
            d_c: T::zero(),
            d_h: T::zero(),
            d_l: T::zero(),
            d_composite: T::zero(),
        }
    }
}

pub fn composite_distortion<T: Scalar>(
    orig: &PointCloud<T>,
    adv: &PointCloud<T>,
    weights: &MetricWeights<T>,
) -> Result<DistortionReport<T>> {
    weights.validate()?;
    let d_c = chamfer(orig, adv)?;
    let d_h = hausdorff(adv, orig)?;
    let d_l = l2_norm(&adv.perturbation_from(orig)?);
    Ok(DistortionReport {
        d_c,
        d_h,
        d_l,
        d_composite: weights.combine(d_c, d_h, d_l),
    })
}
