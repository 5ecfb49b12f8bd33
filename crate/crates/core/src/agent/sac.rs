//! Soft actor-critic with twin critics, target networks and a learned temperature.
//!
//! Actions are `scale · tanh(u)`, `u ~ N(μ, σ²)`. Critics see the squashed action in
//! `[-1, 1]`, and log-probabilities are taken in that normalised space, so the
//! entropy target `−dim(A)` does not depend on the action scale.

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::approximator::{soft_update, Activation, AdamState, Gradients, Mlp, ScalarAdam};
use crate::error::{contract, Result};

const LOG_STD_MIN: f64 = -5.0;
const LOG_STD_MAX: f64 = 2.0;
const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub tau: f64,
    pub init_temperature: f64,
    /// Defaults to `−dim(A)`.
    pub target_entropy: Option<f64>,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            gamma: 0.99,
            learning_rate: 2e-4,
            batch_size: 128,
            tau: 0.005,
            init_temperature: 1.0,
            target_entropy: None,
        }
    }
}

/// Row-aligned training batch. `actions` are in environment units; `dones` are 0/1.
#[derive(Clone, Debug, PartialEq)]
pub struct SacBatch {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_obs: Array2<f64>,
    pub dones: Array1<f64>,
}

impl SacBatch {
    pub fn zeros(rows: usize, obs_dim: usize, act_dim: usize) -> Self {
        Self {
            obs: Array2::zeros((rows, obs_dim)),
            actions: Array2::zeros((rows, act_dim)),
            rewards: Array1::zeros(rows),
            next_obs: Array2::zeros((rows, obs_dim)),
            dones: Array1::zeros(rows),
        }
    }

    pub fn set_row(&mut self, row: usize, obs: &[f64], action: &[f64], reward: f64, next_obs: &[f64], done: bool) {
        for (dst, src) in self.obs.row_mut(row).iter_mut().zip(obs) {
            *dst = *src;
        }
        for (dst, src) in self.actions.row_mut(row).iter_mut().zip(action) {
            *dst = *src;
        }
        for (dst, src) in self.next_obs.row_mut(row).iter_mut().zip(next_obs) {
            *dst = *src;
        }
        self.rewards[row] = reward;
        self.dones[row] = if done { 1.0 } else { 0.0 };
    }

    pub fn len(&self) -> usize {
        self.obs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SacReport {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub temperature: f64,
    pub mean_log_prob: f64,
}

/// Squashed-Gaussian head evaluated on a batch of actor outputs and noise draws.
struct Head {
    /// `tanh` of the raw log-std output (needed for its derivative).
    raw_tanh: Array2<f64>,
    std: Array2<f64>,
    eps: Array2<f64>,
    /// Squashed action in `[-1, 1]`.
    action: Array2<f64>,
    log_prob: Array1<f64>,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(1 − tanh²(u))` without cancellation.
fn log1m_tanh2(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

fn head(out: &Array2<f64>, eps: ArrayView2<f64>) -> Head {
    let (n, two_d) = out.dim();
    let d = two_d / 2;
    let mut h = Head {
        raw_tanh: Array2::zeros((n, d)),
        std: Array2::zeros((n, d)),
        eps: eps.to_owned(),
        action: Array2::zeros((n, d)),
        log_prob: Array1::zeros(n),
    };
    for i in 0..n {
        let mut lp = 0.0;
        for k in 0..d {
            let mu = out[[i, k]];
            let rt = out[[i, d + k]].tanh();
            let ls = LOG_STD_MIN + 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (rt + 1.0);
            let sd = ls.exp();
            let e = eps[[i, k]];
            let u = mu + sd * e;
            h.raw_tanh[[i, k]] = rt;
            h.std[[i, k]] = sd;
            h.action[[i, k]] = u.tanh();
            lp += -0.5 * e * e - ls - HALF_LOG_2PI - log1m_tanh2(u);
        }
        h.log_prob[i] = lp;
    }
    h
}

fn concat(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows(), a.ncols() + b.ncols()));
    out.slice_mut(s![.., ..a.ncols()]).assign(&a);
    out.slice_mut(s![.., a.ncols()..]).assign(&b);
    out
}

#[derive(Clone, Debug)]
pub struct Sac {
    cfg: SacConfig,
    obs_dim: usize,
    act_dim: usize,
    action_scale: f64,
    actor: Mlp,
    q1: Mlp,
    q2: Mlp,
    q1_target: Mlp,
    q2_target: Mlp,
    log_alpha: f64,
    actor_opt: AdamState,
    q1_opt: AdamState,
    q2_opt: AdamState,
    alpha_opt: ScalarAdam,
}

impl Sac {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        action_scale: f64,
        cfg: SacConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if !(action_scale > 0.0) {
            return contract("action scale must be positive");
        }
        if !(cfg.init_temperature > 0.0) {
            return contract("initial temperature must be positive");
        }
        let sizes = |input: usize, output: usize| {
            let mut v = vec![input];
            v.extend(&cfg.hidden);
            v.push(output);
            v
        };
        let actor = Mlp::new(&sizes(obs_dim, 2 * act_dim), Activation::Relu, Activation::Linear, rng)?;
        let q1 = Mlp::new(&sizes(obs_dim + act_dim, 1), Activation::Relu, Activation::Linear, rng)?;
        let q2 = Mlp::new(&sizes(obs_dim + act_dim, 1), Activation::Relu, Activation::Linear, rng)?;
        Ok(Self {
            actor_opt: AdamState::new(&actor, cfg.learning_rate),
            q1_opt: AdamState::new(&q1, cfg.learning_rate),
            q2_opt: AdamState::new(&q2, cfg.learning_rate),
            alpha_opt: ScalarAdam::new(cfg.learning_rate),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            log_alpha: cfg.init_temperature.ln(),
            actor,
            q1,
            q2,
            obs_dim,
            act_dim,
            action_scale,
            cfg,
        })
    }

    pub fn config(&self) -> &SacConfig {
        &self.cfg
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn action_scale(&self) -> f64 {
        self.action_scale
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut Mlp {
        &mut self.actor
    }

    pub fn critics(&self) -> (&Mlp, &Mlp) {
        (&self.q1, &self.q2)
    }

    pub fn critics_mut(&mut self) -> (&mut Mlp, &mut Mlp) {
        (&mut self.q1, &mut self.q2)
    }

    pub fn targets(&self) -> (&Mlp, &Mlp) {
        (&self.q1_target, &self.q2_target)
    }

    pub fn temperature(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn target_entropy(&self) -> f64 {
        self.cfg.target_entropy.unwrap_or(-(self.act_dim as f64))
    }

    /// Samples an action (or returns the mean action when `deterministic`), in env units.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], deterministic: bool, rng: &mut R) -> Result<Vec<f64>> {
        let out = self.actor.forward(obs)?;
        let d = self.act_dim;
        Ok((0..d)
            .map(|k| {
                let u = if deterministic {
                    out[k]
                } else {
                    let rt = out[d + k].tanh();
                    let ls = LOG_STD_MIN + 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (rt + 1.0);
                    let e: f64 = StandardNormal.sample(rng);
                    out[k] + ls.exp() * e
                };
                self.action_scale * u.tanh()
            })
            .collect())
    }

    /// Minimum of the two online critics at `(obs, action)`, action in env units.
    pub fn q_value(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        let mut x = obs.to_vec();
        x.extend(action.iter().map(|a| a / self.action_scale));
        Ok(self.q1.forward(&x)?[0].min(self.q2.forward(&x)?[0]))
    }

    fn noise<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Array2<f64> {
        Array2::from_shape_fn((rows, self.act_dim), |_| StandardNormal.sample(rng))
    }

    /// Twin-critic regression `mean (Q1 − y)² + mean (Q2 − y)²` and its gradients with
    /// respect to each critic. `next_noise` drives the next-action sample in `y`.
    pub fn critic_objective(&self, batch: &SacBatch, next_noise: ArrayView2<f64>) -> Result<(f64, Gradients, Gradients)> {
        let n = batch.len();
        if n == 0 {
            return contract("empty critic batch");
        }
        let next_out = self.actor.forward_batch(batch.next_obs.view())?;
        let nh = head(&next_out, next_noise);
        let next_in = concat(batch.next_obs.view(), nh.action.view());
        let t1 = self.q1_target.forward_batch(next_in.view())?;
        let t2 = self.q2_target.forward_batch(next_in.view())?;
        let alpha = self.temperature();
        let y: Array1<f64> = (0..n)
            .map(|i| {
                let v = t1[[i, 0]].min(t2[[i, 0]]) - alpha * nh.log_prob[i];
                batch.rewards[i] + self.cfg.gamma * (1.0 - batch.dones[i]) * v
            })
            .collect();
        let a_norm = batch.actions.mapv(|a| a / self.action_scale);
        let x = concat(batch.obs.view(), a_norm.view());
        let mut loss = 0.0;
        let mut grads = Vec::with_capacity(2);
        for q in [&self.q1, &self.q2] {
            let cache = q.forward_cached(x.view())?;
            let out = cache.output();
            let mut adj = Array2::zeros((n, 1));
            for i in 0..n {
                let r = out[[i, 0]] - y[i];
                loss += r * r / n as f64;
                adj[[i, 0]] = 2.0 * r / n as f64;
            }
            grads.push(q.backward(&cache, adj.view())?.0);
        }
        let g2 = grads.pop().expect("two critics");
        let g1 = grads.pop().expect("two critics");
        Ok((loss, g1, g2))
    }

    /// Actor objective `mean(α log π(ã|s) − min Q(s, ã))` with reparameterised
    /// `ã` driven by `noise`; returns value, actor gradient and mean log-probability.
    pub fn actor_objective(&self, obs: ArrayView2<f64>, noise: ArrayView2<f64>) -> Result<(f64, Gradients, f64)> {
        let n = obs.nrows();
        if n == 0 {
            return contract("empty actor batch");
        }
        let d = self.act_dim;
        let inv_n = 1.0 / n as f64;
        let cache = self.actor.forward_cached(obs)?;
        let h = head(cache.output(), noise);
        let x = concat(obs, h.action.view());
        let c1 = self.q1.forward_cached(x.view())?;
        let c2 = self.q2.forward_cached(x.view())?;
        let alpha = self.temperature();
        let mut adj1 = Array2::zeros((n, 1));
        let mut adj2 = Array2::zeros((n, 1));
        let mut loss = 0.0;
        for i in 0..n {
            let (v1, v2) = (c1.output()[[i, 0]], c2.output()[[i, 0]]);
            if v1 <= v2 {
                adj1[[i, 0]] = -inv_n;
            } else {
                adj2[[i, 0]] = -inv_n;
            }
            loss += (alpha * h.log_prob[i] - v1.min(v2)) * inv_n;
        }
        let (_, dx1) = self.q1.backward(&c1, adj1.view())?;
        let (_, dx2) = self.q2.backward(&c2, adj2.view())?;
        let mut d_out = Array2::zeros((n, 2 * d));
        for i in 0..n {
            for k in 0..d {
                let t = h.action[[i, k]];
                let sd = h.std[[i, k]];
                let e = h.eps[[i, k]];
                let dq_dt = dx1[[i, self.obs_dim + k]] + dx2[[i, self.obs_dim + k]];
                let dt_du = 1.0 - t * t;
                let d_mu = alpha * 2.0 * t * inv_n + dq_dt * dt_du;
                let d_ls = alpha * (-1.0 + 2.0 * t * sd * e) * inv_n + dq_dt * dt_du * sd * e;
                let rt = h.raw_tanh[[i, k]];
                d_out[[i, k]] = d_mu;
                d_out[[i, d + k]] = d_ls * 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (1.0 - rt * rt);
            }
        }
        let (grads, _) = self.actor.backward(&cache, d_out.view())?;
        Ok((loss, grads, h.log_prob.mean().unwrap_or(0.0)))
    }

    /// One critic step, one actor step, one temperature step, then Polyak targets.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &SacBatch, rng: &mut R) -> Result<SacReport> {
        let n = batch.len();
        let next_noise = self.noise(n, rng);
        let (critic_loss, g1, g2) = self.critic_objective(batch, next_noise.view())?;
        self.q1_opt.step(&mut self.q1, &g1)?;
        self.q2_opt.step(&mut self.q2, &g2)?;

        let noise = self.noise(n, rng);
        let (actor_loss, ga, mean_log_prob) = self.actor_objective(batch.obs.view(), noise.view())?;
        self.actor_opt.step(&mut self.actor, &ga)?;

        let g_alpha = -(mean_log_prob + self.target_entropy());
        self.alpha_opt.step(&mut self.log_alpha, g_alpha)?;

        soft_update(&mut self.q1_target, &self.q1, self.cfg.tau)?;
        soft_update(&mut self.q2_target, &self.q2, self.cfg.tau)?;
        Ok(SacReport {
            critic_loss,
            actor_loss,
            temperature: self.temperature(),
            mean_log_prob,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(rng: &mut ChaCha8Rng) -> Sac {
        let cfg = SacConfig {
            hidden: vec![8, 8],
            ..SacConfig::default()
        };
        Sac::new(3, 2, 2.0, cfg, rng).unwrap()
    }

    fn batch(rng: &mut ChaCha8Rng, n: usize) -> SacBatch {
        let mut b = SacBatch::zeros(n, 3, 2);
        for i in 0..n {
            let o: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let no: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            b.set_row(i, &o, &a, rng.gen_range(-1.0..0.0), &no, i % 7 == 0);
        }
        b
    }

    #[test]
    fn actions_respect_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sac = small(&mut rng);
        for _ in 0..50 {
            let a = sac.act(&[0.3, -0.2, 5.0], false, &mut rng).unwrap();
            assert!(a.iter().all(|v| v.abs() <= 2.0));
        }
        let m1 = sac.act(&[0.3, -0.2, 5.0], true, &mut rng).unwrap();
        let m2 = sac.act(&[0.3, -0.2, 5.0], true, &mut rng).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn log_prob_matches_direct_formula() {
        let out = Array2::from_shape_vec((1, 2), vec![0.3, 0.1]).unwrap();
        let eps = Array2::from_shape_vec((1, 1), vec![0.7]).unwrap();
        let h = head(&out, eps.view());
        let ls = LOG_STD_MIN + 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (0.1f64.tanh() + 1.0);
        let u = 0.3 + ls.exp() * 0.7;
        let gauss = -0.5 * 0.49 - ls - 0.5 * (2.0 * std::f64::consts::PI).ln();
        let expect = gauss - (1.0 - u.tanh().powi(2)).ln();
        assert!((h.log_prob[0] - expect).abs() < 1e-12);
        assert!((log1m_tanh2(30.0) - (-60.0 + 2.0 * std::f64::consts::LN_2)).abs() < 1e-9);
    }

    #[test]
    fn critic_loss_decreases_on_fixed_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut sac = small(&mut rng);
        let b = batch(&mut rng, 32);
        let noise = sac.noise(32, &mut rng);
        let (first, _, _) = sac.critic_objective(&b, noise.view()).unwrap();
        for _ in 0..100 {
            sac.update(&b, &mut rng).unwrap();
        }
        let (last, _, _) = sac.critic_objective(&b, noise.view()).unwrap();
        assert!(last < first, "{last} !< {first}");
    }

    #[test]
    fn temperature_stays_positive_and_targets_track() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut sac = small(&mut rng);
        let b = batch(&mut rng, 16);
        let old_target = sac.targets().0.clone();
        sac.update(&b, &mut rng).unwrap();
        let online = sac.critics().0.clone();
        let target = sac.targets().0;
        for i in 0..online.num_params() {
            let expect = 0.995 * old_target.param(i) + 0.005 * online.param(i);
            assert!((target.param(i) - expect).abs() < 1e-12);
        }
        for _ in 0..200 {
            let r = sac.update(&b, &mut rng).unwrap();
            assert!(r.temperature > 0.0);
        }
    }
}
