//! Failure-aware footstep planning for the actuated spring-loaded
//! inverted pendulum.
//!
//! The crate is organized as a pipeline:
//! - [`dynamics`]: ground-truth hybrid simulator of the apex-to-apex
//!   return map,
//! - [`sampling`] and [`kdtree`]: labeled datasets and oriented-distance
//!   (failure margin) labels,
//! - [`mlp`]: from-scratch feed-forward surrogates of the return map and
//!   the failure margin, with analytic input-Jacobians,
//! - [`planner`]: the N-step nonlinear program over the surrogates,
//! - [`harness`]: threshold sweeps, ablations, and ground-truth rollouts.

pub mod config;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod io;
pub mod kdtree;
pub mod mlp;
pub mod planner;
pub mod sampling;

pub use dynamics::{Action, ApexState, ModelParams, OutcomeTag, StepOutcome};
pub use error::{Error, Result};
pub use kdtree::WeightedKdTree;
pub use mlp::{Mlp, TrainConfig};
pub use planner::{PlanResult, PlanStatus, PlanTask};


pub use sampling::{Bounds, MarginSample, Metric, StepRecord};
