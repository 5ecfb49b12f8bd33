//! Learners: the soft actor-critic building block, the two-level agent and the
//! single-level baseline.

mod flat;
mod hier;
pub mod sac;

pub use flat::{FlatAgent, FlatAgentConfig, FlatPolicy};
pub use hier::{
    high_level_act, intrinsic_reward, low_level_input, low_level_observation, EpisodeSummary, HierAgent,
    HierAgentConfig, HierPolicy, SegmentRecord, StoredTrajectory,
};
pub use sac::{Sac, SacBatch, SacConfig, SacReport};

use rand::Rng;

use crate::envs::EnvState;
use crate::error::Result;

/// Anything that can drive the point robot for evaluation.
pub trait Policy {
    /// Called at every episode start.
    fn reset(&mut self);
    fn act(&mut self, obs: &[f64], state: &EnvState) -> Result<Vec<f64>>;
}

impl Policy for crate::envs::WaypointController {
    fn reset(&mut self) {
        crate::envs::WaypointController::reset(self);
    }

    fn act(&mut self, _obs: &[f64], state: &EnvState) -> Result<Vec<f64>> {
        Ok(crate::envs::WaypointController::act(self, state).to_vec())
    }
}

/// Uniform random actions in `[-1, 1]²`.
pub struct RandomPolicy<R> {
    pub rng: R,
}

impl<R: Rng> Policy for RandomPolicy<R> {
    fn reset(&mut self) {}

    fn act(&mut self, _obs: &[f64], _state: &EnvState) -> Result<Vec<f64>> {
        Ok(vec![self.rng.gen_range(-1.0..=1.0), self.rng.gen_range(-1.0..=1.0)])
    }
}
