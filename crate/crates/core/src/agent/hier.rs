use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sac::{Sac, SacBatch, SacConfig};
use super::Policy;
use crate::approximator::Mlp;
use crate::envs::{EnvState, PointMazeEnv};
use crate::error::{contract, Error, Result};
use crate::explorer::{
    exploration_probability, reactive_intrinsic_reward, select_subgoal, ExplorerConfig, SelectionRecord,
};
use crate::latent::LatentPoint;
use crate::latent_stats::{EpisodeTrace, GridConfig, LatentGrid, PotentialTrace};
use crate::replay::{HighTransition, LowTransition, ReplayBuffer, TripletStore};
use crate::subgoal_repr::{ReprConfig, ReprUpdateReport, SubgoalRepr};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HierAgentConfig {
    /// Primitive steps per subgoal.
    pub c: usize,
    pub low: SacConfig,
    pub high: SacConfig,
    pub reward_scale_high: f64,
    pub reward_scale_low: f64,
    /// Capacity of each replay buffer and of the triplet store, in transitions.
    pub buffer_capacity: usize,
    /// Env steps of uniformly random actions at both levels before learning begins.
    pub learning_starts: u64,
    /// Adds the reactive novelty/potential bonus to the high-level reward.
    pub high_intrinsic: bool,
    /// Episodes kept for rebuilding the latent grid.
    pub trace_capacity: usize,
    pub explorer: ExplorerConfig,
    pub repr: ReprConfig,
    pub grid: GridConfig,
}

impl Default for HierAgentConfig {
    fn default() -> Self {
        Self {
            c: 20,
            low: SacConfig::default(),
            high: SacConfig::default(),
            reward_scale_high: 0.1,
            reward_scale_low: 1.0,
            buffer_capacity: 200_000,
            learning_starts: 5_000,
            high_intrinsic: false,
            trace_capacity: 400,
            explorer: ExplorerConfig::default(),
            repr: ReprConfig::default(),
            grid: GridConfig::default(),
        }
    }
}

impl HierAgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c == 0 {
            return contract("c must be ≥ 1");
        }
        if self.buffer_capacity == 0 || self.trace_capacity == 0 {
            return contract("buffer and trace capacities must be ≥ 1");
        }
        self.explorer.validate()?;
        self.repr.validate()
    }

    /// Half-width of the high-level offset box, `r_g / √d`.
    pub fn offset_bound(&self) -> f64 {
        self.explorer.r_g / (self.repr.latent_dim as f64).sqrt()
    }
}

/// `obs ‖ z`.
pub fn low_level_observation(obs: &[f64], z: &LatentPoint) -> Vec<f64> {
    let mut v = obs.to_vec();
    v.extend_from_slice(z.as_slice());
    v
}

/// Low-level network input: `s^l ‖ (g − z)`, where `z` is the tail of `s^l`.
pub fn low_level_input(low_obs: &[f64], g: &LatentPoint) -> Vec<f64> {
    let d = g.dim();
    let z = &low_obs[low_obs.len() - d..];
    let mut v = low_obs.to_vec();
    v.extend(g.0.iter().zip(z).map(|(a, b)| a - b));
    v
}

/// `−‖g − z‖ · scale`.
pub fn intrinsic_reward(g: &LatentPoint, z: &LatentPoint, scale: f64) -> f64 {
    -g.distance(z) * scale
}

/// Subgoal `z_now + o` from the high-level actor; `o` lies in the actor's action box.
/// Returns the subgoal and the offset.
pub fn high_level_act<R: Rng + ?Sized>(
    pi_h: &Sac,
    obs: &[f64],
    z_now: &LatentPoint,
    deterministic: bool,
    rng: &mut R,
) -> Result<(LatentPoint, Vec<f64>)> {
    let o = pi_h.act(obs, deterministic, rng)?;
    if o.len() != z_now.dim() {
        return contract("high-level action size differs from latent size");
    }
    let g = LatentPoint::new(z_now.0.iter().zip(&o).map(|(z, v)| z + v).collect());
    Ok((g, o))
}

/// One held subgoal.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentRecord {
    pub start_step: usize,
    pub length: usize,
    pub subgoal: LatentPoint,
    pub start_latent: LatentPoint,
    pub explored: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub episode: u64,
    pub steps: usize,
    pub external_return: f64,
    pub success: bool,
    pub intrinsic_return: f64,
    pub exploration_fraction: f64,
    pub segments: Vec<SegmentRecord>,
    pub repr_update: Option<ReprUpdateReport>,
}

impl EpisodeSummary {
    pub fn active_subgoal_count(&self) -> usize {
        self.segments.len()
    }
}

/// Selection made at a decision point and still waiting for its segment to end.
struct Pending {
    start_obs: Vec<f64>,
    start_latent: LatentPoint,
    subgoal: LatentPoint,
    action: Vec<f64>,
    external: f64,
    start_step: usize,
    explored: Option<(LatentPoint, PotentialTrace)>,
}

/// A finished trajectory kept for latent-trajectory exports.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredTrajectory {
    pub episode: u64,
    pub success: bool,
    pub states: Vec<Vec<f64>>,
}

const RECENT_TRAJECTORIES: usize = 20;
const SELECTION_LOG_CAP: usize = 50_000;

pub struct HierAgent {
    cfg: HierAgentConfig,
    obs_dim: usize,
    repr: SubgoalRepr,
    grid: LatentGrid,
    low: Sac,
    high: Sac,
    low_buffer: ReplayBuffer<LowTransition>,
    high_buffer: ReplayBuffer<HighTransition>,
    triplets: TripletStore,
    traces: VecDeque<EpisodeTrace>,
    recent: VecDeque<StoredTrajectory>,
    selections: Vec<SelectionRecord>,
    episode_count: u64,
    global_step: u64,
    last_repr: Option<ReprUpdateReport>,
    rng: ChaCha8Rng,
}

fn encode_all(repr: &SubgoalRepr, states: &[&[f64]]) -> Vec<LatentPoint> {
    repr.encode_batch(states)
        .expect("stored states share the observation size")
}

impl HierAgent {
    pub fn new(obs_dim: usize, cfg: HierAgentConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.repr.latent_dim;
        let repr = SubgoalRepr::new(obs_dim, cfg.repr.clone(), &mut rng)?;
        let low = Sac::new(obs_dim + 2 * d, 2, 1.0, cfg.low.clone(), &mut rng)?;
        let high = Sac::new(obs_dim, d, cfg.offset_bound(), cfg.high.clone(), &mut rng)?;
        Ok(Self {
            grid: LatentGrid::new(cfg.grid),
            low_buffer: ReplayBuffer::new(cfg.buffer_capacity)?,
            high_buffer: ReplayBuffer::new(cfg.buffer_capacity)?,
            triplets: TripletStore::new(cfg.c, cfg.buffer_capacity)?,
            traces: VecDeque::new(),
            recent: VecDeque::new(),
            selections: Vec::new(),
            episode_count: 0,
            global_step: 0,
            last_repr: None,
            obs_dim,
            repr,
            low,
            high,
            rng,
            cfg,
        })
    }

    pub fn config(&self) -> &HierAgentConfig {
        &self.cfg
    }

    pub fn repr(&self) -> &SubgoalRepr {
        &self.repr
    }

    pub fn grid(&self) -> &LatentGrid {
        &self.grid
    }

    pub fn low(&self) -> &Sac {
        &self.low
    }

    pub fn high(&self) -> &Sac {
        &self.high
    }

    pub fn low_buffer(&self) -> &ReplayBuffer<LowTransition> {
        &self.low_buffer
    }

    pub fn high_buffer(&self) -> &ReplayBuffer<HighTransition> {
        &self.high_buffer
    }

    pub fn triplets(&self) -> &TripletStore {
        &self.triplets
    }

    pub fn traces(&self) -> &VecDeque<EpisodeTrace> {
        &self.traces
    }

    pub fn recent_trajectories(&self) -> &VecDeque<StoredTrajectory> {
        &self.recent
    }

    pub fn selections(&self) -> &[SelectionRecord] {
        &self.selections
    }

    pub fn episode_count(&self) -> u64 {
        self.episode_count
    }

    pub fn global_step(&self) -> u64 {
        self.global_step
    }

    pub fn last_repr_update(&self) -> Option<&ReprUpdateReport> {
        self.last_repr.as_ref()
    }

    pub fn encode(&self, obs: &[f64]) -> Result<LatentPoint> {
        self.repr.encode(obs)
    }

    /// Frozen copy of the networks needed to act greedily.
    pub fn policy(&self) -> HierPolicy {
        HierPolicy::new(
            self.repr.phi().clone(),
            self.low.actor().clone(),
            self.high.actor().clone(),
            self.cfg.c,
            self.cfg.offset_bound(),
        )
    }

    fn learning(&self) -> bool {
        self.global_step >= self.cfg.learning_starts
    }

    fn update_low(&mut self) -> Result<()> {
        let bs = self.cfg.low.batch_size;
        if !self.learning() || self.low_buffer.len() < bs {
            return Ok(());
        }
        let idx = self.low_buffer.sample_indices(bs, &mut self.rng)?;
        let in_dim = self.low.obs_dim();
        let mut batch = SacBatch::zeros(bs, in_dim, 2);
        for (row, i) in idx.into_iter().enumerate() {
            let t = self.low_buffer.get(i).expect("sampled index in range");
            let x = low_level_input(&t.low_obs, &t.subgoal);
            let nx = low_level_input(&t.next_low_obs, &t.subgoal);
            batch.set_row(row, &x, &t.action, t.intrinsic_reward, &nx, t.done);
        }
        self.low.update(&batch, &mut self.rng)?;
        Ok(())
    }

    fn update_high(&mut self) -> Result<()> {
        let bs = self.cfg.high.batch_size;
        if !self.learning() || self.high_buffer.len() < bs {
            return Ok(());
        }
        let idx = self.high_buffer.sample_indices(bs, &mut self.rng)?;
        let mut batch = SacBatch::zeros(bs, self.obs_dim, self.cfg.repr.latent_dim);
        for (row, i) in idx.into_iter().enumerate() {
            let t = self.high_buffer.get(i).expect("sampled index in range");
            batch.set_row(row, &t.obs, &t.action, t.external_return, &t.next_obs, t.done);
        }
        self.high.update(&batch, &mut self.rng)?;
        Ok(())
    }

    /// Chooses the subgoal for a new segment.
    fn decide(&mut self, obs: &[f64], z: &LatentPoint, step: usize, p: f64) -> Result<Pending> {
        let bound = self.cfg.offset_bound();
        let u: f64 = self.rng.gen();
        if u < p && self.grid.total_mass() > 0.0 && !self.low_buffer.is_empty() {
            let repr = &self.repr;
            let candidates = self.low_buffer.sample_candidates_within_radius(
                |states| encode_all(repr, states),
                z,
                self.cfg.explorer.r_g,
                self.cfg.explorer.m,
                &mut self.rng,
            );
            match select_subgoal(&self.cfg.explorer, &self.grid, &candidates, z, &mut self.rng) {
                Ok(sel) => {
                    let dir: Vec<f64> = if self.cfg.explorer.d_e > 0.0 {
                        sel.g_e
                            .0
                            .iter()
                            .zip(&sel.g_t.0)
                            .map(|(e, t)| (e - t) / self.cfg.explorer.d_e)
                            .collect()
                    } else {
                        vec![1.0; z.dim()]
                    };
                    let action = sel
                        .g_e
                        .0
                        .iter()
                        .zip(&z.0)
                        .map(|(g, zz)| (g - zz).clamp(-bound, bound))
                        .collect();
                    self.log_selection(SelectionRecord {
                        step: self.global_step,
                        cell: self.grid.cell_of(&sel.g_t).ok(),
                        novelty: sel.novelty,
                        potential: sel.potential,
                        score: sel.score,
                        fallback: false,
                        subgoal: sel.g_e.clone(),
                    });
                    let trace = PotentialTrace {
                        candidate_state: candidates[sel.index].state.clone(),
                        start_state: obs.to_vec(),
                        end_state: Vec::new(),
                        direction: dir,
                    };
                    return Ok(Pending {
                        start_obs: obs.to_vec(),
                        start_latent: z.clone(),
                        subgoal: sel.g_e,
                        action,
                        external: 0.0,
                        start_step: step,
                        explored: Some((sel.g_t, trace)),
                    });
                }
                Err(Error::NoCandidate) => {}
                Err(e) => return Err(e),
            }
            let (g, action) = self.policy_subgoal(obs, z)?;
            self.log_selection(SelectionRecord {
                step: self.global_step,
                cell: self.grid.cell_of(&g).ok(),
                novelty: f64::NAN,
                potential: f64::NAN,
                score: f64::NAN,
                fallback: true,
                subgoal: g.clone(),
            });
            return Ok(self.pending(obs, z, g, action, step));
        }
        let (g, action) = self.policy_subgoal(obs, z)?;
        Ok(self.pending(obs, z, g, action, step))
    }

    fn pending(&self, obs: &[f64], z: &LatentPoint, g: LatentPoint, action: Vec<f64>, step: usize) -> Pending {
        Pending {
            start_obs: obs.to_vec(),
            start_latent: z.clone(),
            subgoal: g,
            action,
            external: 0.0,
            start_step: step,
            explored: None,
        }
    }

    fn policy_subgoal(&mut self, obs: &[f64], z: &LatentPoint) -> Result<(LatentPoint, Vec<f64>)> {
        if self.learning() {
            high_level_act(&self.high, obs, z, false, &mut self.rng)
        } else {
            let bound = self.cfg.offset_bound();
            let o: Vec<f64> = (0..z.dim()).map(|_| self.rng.gen_range(-bound..=bound)).collect();
            let g = LatentPoint::new(z.0.iter().zip(&o).map(|(a, b)| a + b).collect());
            Ok((g, o))
        }
    }

    fn log_selection(&mut self, rec: SelectionRecord) {
        if self.selections.len() < SELECTION_LOG_CAP {
            self.selections.push(rec);
        }
    }

    /// One training episode: act, store, learn at both levels, then update the
    /// latent statistics and, on schedule, the representation.
    pub fn run_episode(&mut self, env: &mut PointMazeEnv, total_steps: u64) -> Result<EpisodeSummary> {
        if env.obs_dim() != self.obs_dim {
            return contract("environment observation size differs from the agent's");
        }
        let c = self.cfg.c;
        let mut obs = env.reset();
        let mut z = self.repr.encode(&obs)?;
        let mut states = vec![obs.clone()];
        let mut trace = EpisodeTrace::default();
        let mut segments = Vec::new();
        let mut pending: Option<Pending> = None;
        let mut external_return = 0.0;
        let mut intrinsic_return = 0.0;
        let mut explored = 0usize;
        let mut success = false;
        let mut t = 0usize;
        loop {
            if t % c == 0 {
                let p = exploration_probability(&self.cfg.explorer, self.global_step, total_steps);
                trace.boundary_states.push(obs.clone());
                let dec = self.decide(&obs, &z, t, p)?;
                if dec.explored.is_some() {
                    explored += 1;
                }
                pending = Some(dec);
            }
            let seg = pending.as_mut().expect("segment opened at t = 0");
            let low_obs = low_level_observation(&obs, &z);
            let action = if self.learning() {
                self.low.act(&low_level_input(&low_obs, &seg.subgoal), false, &mut self.rng)?
            } else {
                vec![self.rng.gen_range(-1.0..=1.0), self.rng.gen_range(-1.0..=1.0)]
            };
            let out = env.step(&action);
            let z_next = self.repr.encode(&out.observation)?;
            let r_low = intrinsic_reward(&seg.subgoal, &z_next, self.cfg.reward_scale_low);
            intrinsic_return += r_low;
            external_return += out.reward;
            seg.external += out.reward;
            success |= out.success();
            self.low_buffer.append(LowTransition {
                obs: obs.clone(),
                low_obs,
                action,
                intrinsic_reward: r_low,
                next_obs: out.observation.clone(),
                next_low_obs: low_level_observation(&out.observation, &z_next),
                subgoal: seg.subgoal.clone(),
                done: out.success(),
            });
            self.global_step += 1;
            t += 1;
            states.push(out.observation.clone());
            self.update_low()?;

            if t % c == 0 || out.done {
                let seg = pending.take().expect("open segment");
                let mut reward = seg.external;
                if self.cfg.high_intrinsic && self.grid.total_mass() > 0.0 {
                    reward += reactive_intrinsic_reward(&self.grid, &z_next, self.cfg.explorer.eta1, self.cfg.explorer.eta2)?;
                }
                self.high_buffer.append(HighTransition {
                    obs: seg.start_obs,
                    subgoal: seg.subgoal.clone(),
                    action: seg.action,
                    external_return: reward * self.cfg.reward_scale_high,
                    next_obs: out.observation.clone(),
                    done: out.success(),
                    episode_id: self.episode_count,
                    step_index: seg.start_step,
                });
                let was_explored = seg.explored.is_some();
                if let Some((g_t, mut pt)) = seg.explored {
                    self.grid.record_potential_sample(&g_t, &seg.subgoal, &z_next)?;
                    pt.end_state = out.observation.clone();
                    trace.potential_samples.push(pt);
                }
                segments.push(SegmentRecord {
                    start_step: seg.start_step,
                    length: t - seg.start_step,
                    subgoal: seg.subgoal,
                    start_latent: seg.start_latent,
                    explored: was_explored,
                });
                self.update_high()?;
            }
            obs = out.observation;
            z = z_next;
            if out.done {
                break;
            }
        }

        let boundary: Vec<&[f64]> = trace.boundary_states.iter().map(Vec::as_slice).collect();
        let chain = encode_all(&self.repr, &boundary);
        self.grid.begin_episode_decay();
        self.grid.record_trajectory(&chain)?;
        self.traces.push_back(trace);
        while self.traces.len() > self.cfg.trace_capacity {
            self.traces.pop_front();
        }
        self.recent.push_back(StoredTrajectory {
            episode: self.episode_count,
            success,
            states: states.clone(),
        });
        while self.recent.len() > RECENT_TRAJECTORIES {
            self.recent.pop_front();
        }
        self.triplets.push_episode(states);
        self.episode_count += 1;

        let mut repr_update = None;
        let interval = self.cfg.repr.update_interval as u64;
        if interval > 0 && self.episode_count % interval == 0 {
            repr_update = self.update_representation()?;
        }
        let decisions = segments.len().max(1);
        Ok(EpisodeSummary {
            episode: self.episode_count - 1,
            steps: t,
            external_return,
            success,
            intrinsic_return,
            exploration_fraction: explored as f64 / decisions as f64,
            segments,
            repr_update,
        })
    }

    /// Runs one representation round and rebuilds the latent grid under the new φ.
    pub fn update_representation(&mut self) -> Result<Option<ReprUpdateReport>> {
        let report = self.repr.update_representation(&mut self.triplets, &mut self.rng)?;
        if let Some(r) = &report {
            log::info!(
                "repr update at episode {}: L_tri {:.4} L_s {:.5} anchors {} displacement {:.4}",
                self.episode_count,
                r.mean_triplet_loss,
                r.mean_stability_loss,
                r.anchor_count,
                r.mean_anchor_displacement
            );
            self.last_repr = Some(r.clone());
        }
        let repr = &self.repr;
        self.grid
            .rebuild(self.traces.iter(), |s| repr.encode_batch(s), self.cfg.explorer.d_e)?;
        Ok(report)
    }
}

/// Deterministic mean action `scale · tanh(μ)` of a squashed-Gaussian actor.
pub(crate) fn mean_action(actor: &Mlp, input: &[f64], scale: f64) -> Result<Vec<f64>> {
    let out = actor.forward(input)?;
    let d = out.len() / 2;
    Ok(out[..d].iter().map(|m| scale * m.tanh()).collect())
}

/// Greedy two-level policy over frozen networks: a new subgoal every `c` steps from
/// the high-level mean action, low-level mean actions in between. No exploration.
#[derive(Clone, Debug)]
pub struct HierPolicy {
    pub phi: Mlp,
    pub low_actor: Mlp,
    pub high_actor: Mlp,
    pub c: usize,
    pub offset_bound: f64,
    t: usize,
    subgoal: Option<LatentPoint>,
}

impl HierPolicy {
    pub fn new(phi: Mlp, low_actor: Mlp, high_actor: Mlp, c: usize, offset_bound: f64) -> Self {
        Self {
            phi,
            low_actor,
            high_actor,
            c,
            offset_bound,
            t: 0,
            subgoal: None,
        }
    }

    pub fn current_subgoal(&self) -> Option<&LatentPoint> {
        self.subgoal.as_ref()
    }
}

impl Policy for HierPolicy {
    fn reset(&mut self) {
        self.t = 0;
        self.subgoal = None;
    }

    fn act(&mut self, obs: &[f64], _state: &EnvState) -> Result<Vec<f64>> {
        let z = LatentPoint::new(self.phi.forward(obs)?);
        if self.t % self.c.max(1) == 0 || self.subgoal.is_none() {
            let o = mean_action(&self.high_actor, obs, self.offset_bound)?;
            self.subgoal = Some(LatentPoint::new(z.0.iter().zip(&o).map(|(a, b)| a + b).collect()));
        }
        self.t += 1;
        let g = self.subgoal.as_ref().expect("set above");
        mean_action(&self.low_actor, &low_level_input(&low_level_observation(obs, &z), g), 1.0)
    }
}
