//! Desk-scale temporal-difference model predictive control with a policy
//! constraint.
//!
//! The crate is split along the pieces of the training pipeline:
//!
//! * [`tensor`]: a small double-precision reverse-mode autodiff engine with
//!   the MLP layers and the Adam optimizer the networks need.
//! * [`envs`]: analytic continuous-control toys, tabular MDPs and the
//!   oriented graph world.
//! * [`world_model`]: encoder, latent dynamics, reward head and Q ensemble,
//!   two-hot value bins, the joint model loss and TD targets.
//! * [`planner`]: MPPI over latent action sequences.
//! * [`policy`]: the tanh-Gaussian nominal policy and its constrained,
//!   unconstrained and behavior-cloning updates.
//! * [`theory`]: exact tabular solvers and bound checkers.
//! * [`harness`]: replay buffer, training loop, diagnostics, checkpoints,
//!   metrics CSV and SVG plots.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod envs;
pub mod error;
pub mod harness;
pub mod planner;
pub mod policy;
pub mod rng;
pub mod tensor;
pub mod theory;
pub mod world_model;

pub use envs::{make_env, Env, EnvSpec, TabularMdp};
pub use error::{Error, Result};
pub use harness::{MetricsRow, ReplayBuffer, RunConfig, Trainer, TransitionRecord};
pub use planner::{PlanDistribution, PlanResult, PlannerConfig};
pub use policy::{PolicyConfig, ScaleTracker, TanhGaussianPolicy, Variant};
pub use tensor::{Tape, Tensor, Var};
pub use world_model::{BinSpec, WorldModel};
