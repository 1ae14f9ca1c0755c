//! Gradient-based adversarial attacks on point-cloud classifiers.
//!
//! The crate bundles everything needed to run the attacks end to end at
//! desk scale:
//!
//! - [`cloud`]: point clouds, synthetic primitive shapes, unit-cube
//!   normalization and XYZ text I/O.
//! - [`classifier`]: a small max-pooling point-set network with exact
//!   reverse-mode input gradients of the C&W hinge loss, plus SGD training.
//! - [`metrics`]: Chamfer, Hausdorff, perturbation l2 and the weighted
//!   composite distortion.
//! - [`attack`]: the weighted, step-adaptive iterative attack (WAAttack),
//!   which reduces to the classical uniform update when its features are off.
//! - [`subattack`]: subset partitioning, exhaustive combination scoring and
//!   masked updates (SubAttack).
//! - [`defense`]: statistical outlier removal.
//!
//! All numeric code is generic over [`Scalar`]; the `*64` / `*32` aliases
//! below fix the precision for callers that do not care.

pub mod attack;
pub mod classifier;
pub mod cloud;
pub mod defense;
mod error;
pub mod metrics;
mod scalar;
pub mod subattack;

pub use attack::{
    AttackConfig, AttackResult, DenominatorNorm, IterationRecord, IterationView, run_waattack,
    run_waattack_observed,
};
pub use classifier::{Classifier, Dims, TrainConfig, TrainReport};
pub use cloud::{Perturbation, Point3, PointCloud, ShapeClass};
pub use defense::{SorConfig, sor_filter};
pub use error::{Error, Result};
pub use metrics::{DistortionReport, MetricWeights};
pub use scalar::Scalar;
pub use subattack::{Combination, Partition, PartitionStrategy, run_subattack, run_subattack_observed};

pub type PointCloud64 = PointCloud<f64>;
pub type PointCloud32 = PointCloud<f32>;
pub type Classifier64 = Classifier<f64>;
pub type Classifier32 = Classifier<f32>;
pub type AttackConfig64 = AttackConfig<f64>;
pub type AttackConfig32 = AttackConfig<f32>;
pub type AttackResult64 = AttackResult<f64>;
pub type AttackResult32 = AttackResult<f32>;
pub type DistortionReport64 = DistortionReport<f64>;
