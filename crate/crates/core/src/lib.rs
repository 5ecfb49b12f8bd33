//! Goal-conditioned hierarchical RL with a stable, online-learned subgoal space and
//! active novelty/potential-driven subgoal selection, on kinematic maze tasks.

pub mod agent;
pub mod approximator;
pub mod envs;
pub mod explorer;
pub mod harness;
pub mod error;
pub mod latent;
pub mod latent_stats;
pub mod replay;
pub mod subgoal_repr;

pub use error::{Error, Result};
