use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Variant};
use super::visuals::{emit_visuals, write_cell_table};
use crate::agent::{FlatAgent, HierAgent, HierPolicy, Policy};
use crate::approximator::checkpoint;
use crate::envs::PointMazeEnv;
use crate::error::{Error, Result};
use crate::explorer::{exploration_probability, write_selection_log};
use crate::replay::{dump_high, dump_low};

/// One evaluation point. Column order of the metrics file follows field order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub env_step: u64,
    pub variant: String,
    pub seed: u64,
    pub success_rate: f64,
    pub mean_episode_return: f64,
    /// Mean triplet loss of the latest representation round (NaN before the first).
    pub mean_l_tri: f64,
    /// Mean anchor displacement of the latest representation round (NaN before the first).
    pub mean_anchor_displacement: f64,
    pub exploration_p: f64,
    pub cells_visited: usize,
}

pub const METRICS_HEADER: [&str; 9] = [
    "env_step",
    "variant",
    "seed",
    "success_rate",
    "mean_episode_return",
    "mean_l_tri",
    "mean_anchor_displacement",
    "exploration_p",
    "cells_visited",
];

pub fn write_metrics(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(METRICS_HEADER)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<MetricsRow>, _>>()?;
    Ok(rows)
}

/// Greedy rollouts of `policy`; returns `(success rate, mean external return)`.
pub fn evaluate_with_return<P: Policy + ?Sized>(policy: &mut P, env: &mut PointMazeEnv, episodes: usize) -> Result<(f64, f64)> {
    let mut successes = 0usize;
    let mut total = 0.0;
    for _ in 0..episodes {
        policy.reset();
        let mut obs = env.reset();
        loop {
            let state = *env.state();
            let a = policy.act(&obs, &state)?;
            let out = env.step(&a);
            total += out.reward;
            if out.done {
                if out.success() {
                    successes += 1;
                }
                break;
            }
            obs = out.observation;
        }
    }
    let n = episodes.max(1) as f64;
    Ok((successes as f64 / n, total / n))
}

/// Fraction of `episodes` greedy rollouts that reach the goal.
pub fn evaluate<P: Policy + ?Sized>(policy: &mut P, env: &mut PointMazeEnv, episodes: usize) -> Result<f64> {
    Ok(evaluate_with_return(policy, env, episodes)?.0)
}

/// Directory of one `(variant, seed)` run.
pub fn run_dir(out: &Path, variant: Variant, seed: u64) -> PathBuf {
    out.join(format!("{}_seed{}", variant.name(), seed))
}

fn write_hier_checkpoint(agent: &HierAgent, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    checkpoint::save(agent.repr().phi(), &dir.join("phi.txt"))?;
    checkpoint::save(agent.low().actor(), &dir.join("low_actor.txt"))?;
    checkpoint::save(agent.high().actor(), &dir.join("high_actor.txt"))?;
    fs::write(dir.join("config.toml"), cfg.to_toml_string()?)?;
    write_cell_table(
        agent.grid(),
        &agent.config().explorer,
        &dir.join("cells.tsv"),
    )?;
    Ok(())
}

fn write_flat_checkpoint(agent: &FlatAgent, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    checkpoint::save(agent.sac().actor(), &dir.join("actor.txt"))?;
    fs::write(dir.join("config.toml"), cfg.to_toml_string()?)?;
    Ok(())
}

/// A policy restored from a checkpoint directory, plus the config it was trained with.
pub enum LoadedPolicy {
    Hier(HierPolicy),
    Flat(crate::agent::FlatPolicy),
}

impl Policy for LoadedPolicy {
    fn reset(&mut self) {
        match self {
            LoadedPolicy::Hier(p) => p.reset(),
            LoadedPolicy::Flat(p) => p.reset(),
        }
    }

    fn act(&mut self, obs: &[f64], state: &crate::envs::EnvState) -> Result<Vec<f64>> {
        match self {
            LoadedPolicy::Hier(p) => p.act(obs, state),
            LoadedPolicy::Flat(p) => p.act(obs, state),
        }
    }
}

pub fn load_checkpoint(dir: &Path) -> Result<(ExperimentConfig, LoadedPolicy)> {
    let cfg = ExperimentConfig::from_file(&dir.join("config.toml"))?;
    let policy = if cfg.variant.is_hierarchical() {
        let agent = cfg.agent_for(cfg.variant);
        LoadedPolicy::Hier(HierPolicy::new(
            checkpoint::load(&dir.join("phi.txt"))?,
            checkpoint::load(&dir.join("low_actor.txt"))?,
            checkpoint::load(&dir.join("high_actor.txt"))?,
            agent.c,
            agent.offset_bound(),
        ))
    } else {
        LoadedPolicy::Flat(crate::agent::FlatPolicy {
            actor: checkpoint::load(&dir.join("actor.txt"))?,
        })
    };
    Ok((cfg, policy))
}

/// Evaluation thresholds crossed when moving from `before` to `after` env steps.
fn crossed(before: u64, after: u64, interval: u64, total: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut k = before / interval + 1;
    while k * interval <= after && k * interval <= total {
        out.push(k * interval);
        k += 1;
    }
    if after >= total && before < total && total % interval != 0 {
        out.push(total);
    }
    out
}

/// Trains one `(variant, seed)` pair, writing `metrics.csv`, a checkpoint and visual
/// exports under `dir`. Returns the metrics rows.
pub fn run_single(cfg: &ExperimentConfig, variant: Variant, seed: u64, dir: &Path) -> Result<Vec<MetricsRow>> {
    fs::create_dir_all(dir)?;
    let spec = cfg.maze_spec()?;
    let mut run_cfg = cfg.clone();
    run_cfg.variant = variant;
    run_cfg.seeds = vec![seed];
    let mut env = PointMazeEnv::new(spec.clone(), cfg.dynamics)?;
    let mut eval_env = PointMazeEnv::new(spec, cfg.dynamics)?;
    let total = cfg.total_env_steps;
    let mut rows = Vec::new();
    let metrics_path = dir.join("metrics.csv");

    if !variant.is_hierarchical() {
        let mut agent = FlatAgent::new(env.obs_dim(), cfg.flat.clone(), seed)?;
        while agent.global_step() < total {
            let before = agent.global_step();
            if let Err(e) = agent.run_episode(&mut env) {
                write_flat_checkpoint(&agent, &run_cfg, &dir.join("checkpoint"))?;
                return Err(abort(e, variant, seed, before));
            }
            for step in crossed(before, agent.global_step(), cfg.eval_interval, total) {
                let (sr, ret) = evaluate_with_return(&mut agent.policy(), &mut eval_env, cfg.eval_episodes)?;
                rows.push(MetricsRow {
                    env_step: step,
                    variant: variant.name().into(),
                    seed,
                    success_rate: sr,
                    mean_episode_return: ret,
                    mean_l_tri: f64::NAN,
                    mean_anchor_displacement: f64::NAN,
                    exploration_p: 0.0,
                    cells_visited: 0,
                });
                log::info!("{variant} seed {seed} step {step}: success {sr:.2}");
            }
            write_metrics(&rows, &metrics_path)?;
        }
        write_flat_checkpoint(&agent, &run_cfg, &dir.join("checkpoint"))?;
        return Ok(rows);
    }

    let agent_cfg = cfg.agent_for(variant);
    let mut agent = HierAgent::new(env.obs_dim(), agent_cfg.clone(), seed)?;
    let mut visual_steps: Vec<u64> = cfg.visual_steps.iter().copied().filter(|s| *s < total).collect();
    visual_steps.sort_unstable();
    visual_steps.dedup();
    let mut next_visual = 0;
    while agent.global_step() < total {
        let before = agent.global_step();
        if let Err(e) = agent.run_episode(&mut env, total) {
            write_hier_checkpoint(&agent, &run_cfg, &dir.join("checkpoint"))?;
            return Err(abort(e, variant, seed, before));
        }
        let after = agent.global_step();
        for step in crossed(before, after, cfg.eval_interval, total) {
            let (sr, ret) = evaluate_with_return(&mut agent.policy(), &mut eval_env, cfg.eval_episodes)?;
            let repr = agent.last_repr_update();
            rows.push(MetricsRow {
                env_step: step,
                variant: variant.name().into(),
                seed,
                success_rate: sr,
                mean_episode_return: ret,
                mean_l_tri: repr.map_or(f64::NAN, |r| r.mean_triplet_loss),
                mean_anchor_displacement: repr.map_or(f64::NAN, |r| r.mean_anchor_displacement),
                exploration_p: exploration_probability(&agent_cfg.explorer, step, total),
                cells_visited: agent.grid().num_cells(),
            });
            log::info!(
                "{variant} seed {seed} step {step}: success {sr:.2}, cells {}",
                agent.grid().num_cells()
            );
        }
        write_metrics(&rows, &metrics_path)?;
        while next_visual < visual_steps.len() && after >= visual_steps[next_visual] {
            emit_visuals(&agent, &dir.join(format!("visuals_{}", visual_steps[next_visual])))?;
            next_visual += 1;
        }
    }
    emit_visuals(&agent, &dir.join("visuals_final"))?;
    write_selection_log(agent.selections(), &dir.join("selections.tsv"))?;
    write_hier_checkpoint(&agent, &run_cfg, &dir.join("checkpoint"))?;
    Ok(rows)
}

/// Replay buffers are large; dumping them is opt-in.
pub fn dump_buffers(agent: &HierAgent, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    dump_low(agent.low_buffer(), &dir.join("low_buffer.tsv"))?;
    dump_high(agent.high_buffer(), &dir.join("high_buffer.tsv"))
}

fn abort(e: Error, variant: Variant, seed: u64, step: u64) -> Error {
    log::error!("{variant} seed {seed} aborted near env step {step}: {e}");
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("{variant} seed {seed} near step {step}: {msg}")),
        other => other,
    }
}

/// Trains every configured seed of the configured variant and merges their rows into
/// `<out>/metrics.csv`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let mut all = Vec::new();
    for &seed in &cfg.seeds {
        all.extend(run_single(cfg, cfg.variant, seed, &run_dir(out, cfg.variant, seed))?);
    }
    write_metrics(&all, &out.join("metrics.csv"))?;
    Ok(all)
}
