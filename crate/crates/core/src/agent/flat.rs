use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::hier::mean_action;
use super::sac::{Sac, SacBatch, SacConfig};
use super::Policy;
use crate::approximator::Mlp;
use crate::envs::{EnvState, PointMazeEnv};
use crate::error::Result;
use crate::replay::ReplayBuffer;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlatAgentConfig {
    pub sac: SacConfig,
    pub buffer_capacity: usize,
    pub learning_starts: u64,
}

impl Default for FlatAgentConfig {
    fn default() -> Self {
        Self {
            sac: SacConfig::default(),
            buffer_capacity: 200_000,
            learning_starts: 5_000,
        }
    }
}

#[derive(Clone, Debug)]
struct Transition {
    obs: Vec<f64>,
    action: Vec<f64>,
    reward: f64,
    next_obs: Vec<f64>,
    done: bool,
}

/// Single-level SAC on the sparse environment reward.
pub struct FlatAgent {
    cfg: FlatAgentConfig,
    sac: Sac,
    buffer: ReplayBuffer<Transition>,
    global_step: u64,
    episode_count: u64,
    rng: ChaCha8Rng,
}

impl FlatAgent {
    pub fn new(obs_dim: usize, cfg: FlatAgentConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sac = Sac::new(obs_dim, 2, 1.0, cfg.sac.clone(), &mut rng)?;
        Ok(Self {
            buffer: ReplayBuffer::new(cfg.buffer_capacity)?,
            global_step: 0,
            episode_count: 0,
            sac,
            rng,
            cfg,
        })
    }

    pub fn sac(&self) -> &Sac {
        &self.sac
    }

    pub fn global_step(&self) -> u64 {
        self.global_step
    }

    pub fn episode_count(&self) -> u64 {
        self.episode_count
    }

    pub fn policy(&self) -> FlatPolicy {
        FlatPolicy {
            actor: self.sac.actor().clone(),
        }
    }

    /// Returns `(steps, external return, success)`.
    pub fn run_episode(&mut self, env: &mut PointMazeEnv) -> Result<(usize, f64, bool)> {
        let mut obs = env.reset();
        let mut ret = 0.0;
        let mut steps = 0;
        loop {
            let learning = self.global_step >= self.cfg.learning_starts;
            let action = if learning {
                self.sac.act(&obs, false, &mut self.rng)?
            } else {
                vec![self.rng.gen_range(-1.0..=1.0), self.rng.gen_range(-1.0..=1.0)]
            };
            let out = env.step(&action);
            ret += out.reward;
            steps += 1;
            self.global_step += 1;
            self.buffer.append(Transition {
                obs: obs.clone(),
                action,
                reward: out.reward,
                next_obs: out.observation.clone(),
                done: out.success(),
            });
            let bs = self.cfg.sac.batch_size;
            if learning && self.buffer.len() >= bs {
                let idx = self.buffer.sample_indices(bs, &mut self.rng)?;
                let mut batch = SacBatch::zeros(bs, self.sac.obs_dim(), 2);
                for (row, i) in idx.into_iter().enumerate() {
                    let t = self.buffer.get(i).expect("sampled index in range");
                    batch.set_row(row, &t.obs, &t.action, t.reward, &t.next_obs, t.done);
                }
                self.sac.update(&batch, &mut self.rng)?;
            }
            let (done, success) = (out.done, out.success());
            obs = out.observation;
            if done {
                self.episode_count += 1;
                return Ok((steps, ret, success));
            }
        }
    }
}

/// Greedy single-level policy over a frozen actor.
#[derive(Clone, Debug)]
pub struct FlatPolicy {
    pub actor: Mlp,
}

impl Policy for FlatPolicy {
    fn reset(&mut self) {}

    fn act(&mut self, obs: &[f64], _state: &EnvState) -> Result<Vec<f64>> {
        mean_action(&self.actor, obs, 1.0)
    }
}
