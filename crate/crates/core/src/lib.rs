//! Value-guided model identification for model-based policy search.
//!
//! The crate identifies unknown mechanical parameters of a simulated system
//! from observed transitions. A Gaussian-process surrogate of the simulation
//! error yields a belief over which grid model minimizes it; new models are
//! chosen greedily by their entropy contribution, and identification stops
//! as soon as all probable models agree on the value of the current policy.
//! Identification alternates with a KL-bounded policy search in the outer
//! learning loop.

pub mod baselines;
pub mod belief;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod gp;
pub mod grid;
pub mod harness;
pub mod learn;
pub mod objective;
pub mod optimize;
pub mod policy;
pub mod vgmi;

pub use belief::{estimate_min_distribution, select_next_model, BeliefDistribution};
pub use data::TransitionDataset;
pub use dynamics::{rollout, step, Action, ModelParams, State, SystemKind, SystemSpec, Transition};
pub use error::{Error, Result};
pub use gp::{fit_gp, gp_posterior, sample_gp_on_grid, GpModel, Kernel};
pub use grid::ModelGrid;
pub use objective::{simulation_error, BudgetSpec};
pub use policy::{policy_update, policy_value, Policy, RewardSpec, Task};
pub use vgmi::{check_stop, identify, local_refine, VgmiConfig};
