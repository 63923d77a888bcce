//! Stochastic gradient descent on two-layer diagonal linear networks in high
//! dimension. Streaming SGD is compared against its diffusion surrogates and
//! against deterministic curves built from resolvent contour integrals.
//! The `entropy` module certifies risk decay for the isotropic squared model.

// Index loops mirror the coordinate formulas; negated comparisons are how
// NaN gets rejected along with out-of-range values.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod det_equiv;
pub mod entropy;
pub mod error;
pub mod experiments;
pub mod model;
pub mod resolvent;
pub mod rng;
pub mod schedule;
pub mod sde;
pub mod sgd;
pub mod spectra;
pub mod statistic;
pub mod trajectory;

pub use error::{DlnError, Result};
pub use model::{Covariance, Iterate, Mat3, ModelConfig, Preset, ProblemInstance};
pub use schedule::StepSchedule;
pub use statistic::{StatRegistry, StatisticSpec};
pub use trajectory::{RecordGrid, TrajectoryRecord};
