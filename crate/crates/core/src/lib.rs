//! Adversarial risk estimation and training for norm-constrained ReLU networks.
//!
//! The crate covers the network class and its Lipschitz certificate, losses and their
//! calibration checks, ℓ∞ attacks, synthetic data, risk brackets, projected adversarial
//! training, capacity and rate calculators, and a grid oracle for distribution-shift
//! adversaries.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::too_many_arguments,
    clippy::needless_range_loop
)]

pub mod attacks;
pub mod bounds;
pub mod data;
pub mod dist;
pub mod error;
pub mod experiments;
pub mod losses;
pub mod nn;
pub mod risk;
pub mod train;
pub mod util;

pub use attacks::{AttackConfig, AttackMethod, AttackResult, Attacker, Cover};
pub use bounds::{RateExponents, Schedule, Task};
pub use data::{Dataset, DatasetMeta, HolderTarget, PosteriorSpec};
pub use dist::{DiscreteDistribution, GammaInstance};
pub use error::{Error, Result};
pub use losses::{LossKind, LossSpec};
pub use nn::{Architecture, Dense, NetworkParams, NormBudget, Predictor};
pub use risk::RiskReport;
pub use train::{LrSchedule, TrainConfig, TrainHistory};
pub use util::McEstimate;
