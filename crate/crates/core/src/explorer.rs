//! Active subgoal selection: pick the least-novel-yet-reachable candidate and push it
//! outward, with a linearly annealed probability of overriding the high-level policy.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::latent::LatentPoint;
use crate::latent_stats::{imagined_subgoal, CellKey, LatentGrid};
use crate::replay::Candidate;

/// How the novelty term of the selection score is measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoveltySource {
    /// Discounted cumulative future visits.
    Cumulative,
    /// Plain per-cell visit mass.
    Immediate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplorerConfig {
    pub alpha: f64,
    pub r_g: f64,
    pub d_e: f64,
    pub m: usize,
    pub p0: f64,
    pub anneal_end_fraction: f64,
    pub novelty: NoveltySource,
    pub eta1: f64,
    pub eta2: f64,
}

impl Default for ExplorerConfig {
    fn default() -> Self {
        Self {
            alpha: 0.03,
            r_g: 20.0,
            d_e: 5.0,
            m: 1000,
            p0: 0.7,
            anneal_end_fraction: 0.5,
            novelty: NoveltySource::Cumulative,
            eta1: 1000.0,
            eta2: 10.0,
        }
    }
}

impl ExplorerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return contract("alpha must be ≥ 0");
        }
        if !(self.r_g > 0.0) {
            return contract("r_g must be > 0");
        }
        if !(self.d_e >= 0.0) {
            return contract("d_e must be ≥ 0");
        }
        if !(0.0..=1.0).contains(&self.p0) {
            return contract("p0 must lie in [0, 1]");
        }
        if !(self.anneal_end_fraction > 0.0) {
            return contract("anneal_end_fraction must be > 0");
        }
        Ok(())
    }
}

/// `p0 · (1 − step / (fraction · total))`, floored at 0.
pub fn exploration_probability(cfg: &ExplorerConfig, global_step: u64, total_steps: u64) -> f64 {
    let horizon = cfg.anneal_end_fraction * total_steps as f64;
    if horizon <= 0.0 {
        return 0.0;
    }
    (cfg.p0 * (1.0 - global_step as f64 / horizon)).max(0.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub g_t: LatentPoint,
    pub g_e: LatentPoint,
    pub novelty: f64,
    pub potential: f64,
    pub score: f64,
}

/// Novelty and potential of one point under the configured novelty source.
pub fn score_terms(cfg: &ExplorerConfig, grid: &LatentGrid, z: &LatentPoint) -> Result<(f64, f64)> {
    let n = match cfg.novelty {
        NoveltySource::Cumulative => grid.normalized_novelty(z)?,
        NoveltySource::Immediate => grid.normalized_immediate_count(z)?,
    };
    Ok((n, grid.potential(z)?))
}

/// Minimises `Ñ − α U` over the candidates (first index wins ties) and extends the
/// winner by `d_e` away from `z_now`.
pub fn select_subgoal<R: Rng + ?Sized>(
    cfg: &ExplorerConfig,
    grid: &LatentGrid,
    candidates: &[Candidate],
    z_now: &LatentPoint,
    rng: &mut R,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::NoCandidate);
    }
    let mut best: Option<(usize, f64, f64, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let (n, u) = score_terms(cfg, grid, &c.latent)?;
        let score = n - cfg.alpha * u;
        if best.map_or(true, |b| score < b.1) {
            best = Some((i, score, n, u));
        }
    }
    let (index, score, novelty, potential) = best.expect("non-empty");
    let g_t = candidates[index].latent.clone();
    let g_e = imagined_subgoal(&g_t, z_now, cfg.d_e, rng);
    Ok(Selection {
        index,
        g_t,
        g_e,
        novelty,
        potential,
        score,
    })
}

/// `η₁/√N + η₂/√(−U)` with raw (unnormalised) cumulative count `N ≥ 1` and `−U ≥ 0.01`.
pub fn reactive_intrinsic_reward(grid: &LatentGrid, z: &LatentPoint, eta1: f64, eta2: f64) -> Result<f64> {
    let stats = grid.stats(z)?;
    Ok(reactive_reward_from(stats.cum_novelty, grid.potential(z)?, eta1, eta2))
}

pub fn reactive_reward_from(n: f64, u: f64, eta1: f64, eta2: f64) -> f64 {
    eta1 / n.max(1.0).sqrt() + eta2 / (-u).max(0.01).sqrt()
}

/// One subgoal decision, for the subgoal scatter export.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionRecord {
    pub step: u64,
    pub cell: Option<CellKey>,
    pub novelty: f64,
    pub potential: f64,
    pub score: f64,
    pub fallback: bool,
    pub subgoal: LatentPoint,
}

/// Columns: `step  cell  novelty  potential  score  fallback  subgoal`.
pub fn write_selection_log(records: &[SelectionRecord], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step\tcell\tnovelty\tpotential\tscore\tfallback\tsubgoal")?;
    for r in records {
        let cell = r
            .cell
            .as_ref()
            .map(|k| k.0.iter().map(i64::to_string).collect::<Vec<_>>().join(","))
            .unwrap_or_else(|| "-".into());
        let sub = r.subgoal.0.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ");
        writeln!(
            f,
            "{}\t{}\t{:?}\t{:?}\t{:?}\t{}\t{}",
            r.step,
            cell,
            r.novelty,
            r.potential,
            r.score,
            u8::from(r.fallback),
            sub
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent_stats::GridConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cand(x: f64, y: f64) -> Candidate {
        Candidate {
            state: vec![x, y],
            latent: LatentPoint::new(vec![x, y]),
        }
    }

    #[test]
    fn schedule_points() {
        let cfg = ExplorerConfig::default();
        assert!((exploration_probability(&cfg, 0, 1000) - 0.7).abs() < 1e-15);
        assert_eq!(exploration_probability(&cfg, 500, 1000), 0.0);
        assert!((exploration_probability(&cfg, 250, 1000) - 0.35).abs() < 1e-12);
        assert_eq!(exploration_probability(&cfg, 900, 1000), 0.0);
    }

    #[test]
    fn single_candidate_is_chosen() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut grid = LatentGrid::new(GridConfig::default());
        grid.record_trajectory(&[LatentPoint::new(vec![0.0, 0.0])]).unwrap();
        let s = select_subgoal(
            &ExplorerConfig::default(),
            &grid,
            &[cand(4.0, 0.0)],
            &LatentPoint::new(vec![0.0, 0.0]),
            &mut rng,
        )
        .unwrap();
        assert_eq!(s.index, 0);
        assert_eq!(s.g_t, LatentPoint::new(vec![4.0, 0.0]));
        assert_eq!(s.g_e, LatentPoint::new(vec![9.0, 0.0]));
    }

    #[test]
    fn hand_scored_pair() {
        // cell A: Ñ = 0.5, U = −1; cell B: Ñ = 0.1, U = −100
        let mut grid = LatentGrid::new(GridConfig {
            count_gamma: 0.0,
            ..GridConfig::default()
        });
        let a = LatentPoint::new(vec![0.5, 0.5]);
        let b = LatentPoint::new(vec![10.0, 10.0]);
        let other = LatentPoint::new(vec![-10.0, -10.0]);
        let mut chain = vec![a.clone(); 5];
        chain.push(b.clone());
        chain.extend(vec![other; 4]);
        for z in chain {
            grid.record_trajectory(&[z]).unwrap();
        }
        grid.record_potential_sample(&a, &LatentPoint::new(vec![1.5, 0.5]), &a).unwrap();
        grid.record_potential_sample(&b, &LatentPoint::new(vec![110.0, 10.0]), &b).unwrap();
        let cfg = ExplorerConfig::default();
        let (na, ua) = score_terms(&cfg, &grid, &a).unwrap();
        let (nb, ub) = score_terms(&cfg, &grid, &b).unwrap();
        assert!((na - 0.5).abs() < 1e-12 && (ua + 1.0).abs() < 1e-12);
        assert!((nb - 0.1).abs() < 1e-12 && (ub + 100.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = select_subgoal(&cfg, &grid, &[cand(0.5, 0.5), cand(10.0, 10.0)], &LatentPoint::new(vec![0.0, 0.0]), &mut rng)
            .unwrap();
        assert_eq!(s.index, 0);
        assert!((s.score - 0.53).abs() < 1e-12);

        let pure = ExplorerConfig { alpha: 0.0, ..cfg };
        let s = select_subgoal(&pure, &grid, &[cand(0.5, 0.5), cand(10.0, 10.0)], &LatentPoint::new(vec![0.0, 0.0]), &mut rng)
            .unwrap();
        assert_eq!(s.index, 1);
    }

    #[test]
    fn empty_candidates() {
        let mut grid = LatentGrid::new(GridConfig::default());
        grid.record_trajectory(&[LatentPoint::new(vec![0.0, 0.0])]).unwrap();
        let r = select_subgoal(
            &ExplorerConfig::default(),
            &grid,
            &[],
            &LatentPoint::new(vec![0.0, 0.0]),
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert!(matches!(r, Err(Error::NoCandidate)));
    }

    #[test]
    fn reactive_reward_formula() {
        assert!((reactive_reward_from(1.0, -1.0, 1000.0, 10.0) - 1010.0).abs() < 1e-12);
        assert!((reactive_reward_from(1e20, -4.0, 1000.0, 10.0) - 5.0).abs() < 1e-6);
        let a = reactive_reward_from(4.0, -1.0, 1000.0, 10.0);
        let b = reactive_reward_from(4.0, -1.0, 2000.0, 10.0);
        assert!((b - a - 500.0).abs() < 1e-9);
        assert!((reactive_reward_from(0.0, 0.0, 1000.0, 10.0) - 1100.0).abs() < 1e-9);
    }
}
