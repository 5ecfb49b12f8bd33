//! Cell-discretised statistics over the subgoal space: decayed visit mass, discounted
//! cumulative (future) visit counts, and the average reachability of imagined subgoals.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::latent::LatentPoint;

/// Integer cell coordinates, one per latent dimension.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey(pub Vec<i64>);

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CellStats {
    pub visit_mass: f64,
    pub cum_novelty: f64,
    /// Sum of `−‖z_end − g_e‖` samples (≤ 0).
    pub potential_sum: f64,
    pub potential_weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub grid_size: f64,
    /// Per-episode decay of all statistics.
    pub ema_gamma: f64,
    /// Discount along the high-level chain for cumulative counts.
    pub count_gamma: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            grid_size: 3.0,
            ema_gamma: 0.995,
            count_gamma: 0.99,
        }
    }
}

pub fn cell_of(z: &LatentPoint, grid_size: f64) -> Result<CellKey> {
    if !z.is_finite() {
        return contract(format!("non-finite latent point {:?}", z.0));
    }
    if grid_size <= 0.0 {
        return contract("grid size must be positive");
    }
    Ok(CellKey(
        z.0.iter().map(|v| (v / grid_size).floor() as i64).collect(),
    ))
}

/// Extends `g_t` by `d_e` along the ray from `z_now` through `g_t`. When the two
/// points (nearly) coincide the direction comes from `fallback`, which must return a
/// vector of the latent dimension (it is normalised here).
pub fn imagined_subgoal_with<F>(g_t: &LatentPoint, z_now: &LatentPoint, d_e: f64, fallback: F) -> LatentPoint
where
    F: FnOnce() -> Vec<f64>,
{
    let dir: Vec<f64> = g_t.0.iter().zip(&z_now.0).map(|(g, z)| g - z).collect();
    let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let unit = if len >= 1e-8 {
        dir.iter().map(|v| v / len).collect::<Vec<_>>()
    } else {
        let f = fallback();
        let fl = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        f.iter().map(|v| v / fl).collect()
    };
    LatentPoint::new(g_t.0.iter().zip(&unit).map(|(g, u)| g + d_e * u).collect())
}

/// [`imagined_subgoal_with`] using a seeded random unit direction as the fallback.
pub fn imagined_subgoal<R: Rng + ?Sized>(
    g_t: &LatentPoint,
    z_now: &LatentPoint,
    d_e: f64,
    rng: &mut R,
) -> LatentPoint {
    imagined_subgoal_with(g_t, z_now, d_e, || random_unit(g_t.dim(), rng))
}

pub fn random_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Raw states behind one potential sample, kept so it can be re-derived under a new φ.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialTrace {
    /// Buffer state whose embedding was the selected subgoal.
    pub candidate_state: Vec<f64>,
    /// State at the start of the segment.
    pub start_state: Vec<f64>,
    /// State `c` steps later (or at episode end).
    pub end_state: Vec<f64>,
    /// Extension direction used at selection time, reused only in the degenerate case.
    pub direction: Vec<f64>,
}

/// Everything one episode contributes to the grid.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeTrace {
    /// States at high-level decision points `s_0, s_c, s_2c, …`.
    pub boundary_states: Vec<Vec<f64>>,
    pub potential_samples: Vec<PotentialTrace>,
}

#[derive(Clone, Debug)]
pub struct LatentGrid {
    cfg: GridConfig,
    cells: BTreeMap<CellKey, CellStats>,
    total_mass: f64,
}

impl LatentGrid {
    pub fn new(cfg: GridConfig) -> Self {
        Self {
            cfg,
            cells: BTreeMap::new(),
            total_mass: 0.0,
        }
    }

    pub fn config(&self) -> &GridConfig {
        &self.cfg
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn cells(&self) -> impl Iterator<Item = (&CellKey, &CellStats)> {
        self.cells.iter()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell_of(&self, z: &LatentPoint) -> Result<CellKey> {
        cell_of(z, self.cfg.grid_size)
    }

    pub fn stats(&self, z: &LatentPoint) -> Result<CellStats> {
        Ok(self.cells.get(&self.cell_of(z)?).copied().unwrap_or_default())
    }

    pub fn clear(&mut self) {
        self.cells.clear();
        self.total_mass = 0.0;
    }

    /// Multiplies every statistic by the EMA factor; called once per episode.
    pub fn begin_episode_decay(&mut self) {
        let g = self.cfg.ema_gamma;
        if g == 1.0 {
            return;
        }
        for c in self.cells.values_mut() {
            c.visit_mass *= g;
            c.cum_novelty *= g;
            c.potential_sum *= g;
            c.potential_weight *= g;
        }
        self.total_mass *= g;
    }

    /// Records the latent chain `z_0, z_c, z_2c, …` of one trajectory.
    pub fn record_trajectory(&mut self, chain: &[LatentPoint]) -> Result<()> {
        self.record_trajectory_weighted(chain, 1.0)
    }

    /// As [`Self::record_trajectory`], with every contribution scaled by `weight`.
    pub fn record_trajectory_weighted(&mut self, chain: &[LatentPoint], weight: f64) -> Result<()> {
        let keys = chain
            .iter()
            .map(|z| self.cell_of(z))
            .collect::<Result<Vec<_>>>()?;
        let mut running = 0.0;
        for key in keys.into_iter().rev() {
            running = 1.0 + self.cfg.count_gamma * running;
            let cell = self.cells.entry(key).or_default();
            cell.visit_mass += weight;
            cell.cum_novelty += weight * running;
            self.total_mass += weight;
        }
        Ok(())
    }

    /// Cumulative novelty of `z`'s cell divided by the total visit mass.
    pub fn normalized_novelty(&self, z: &LatentPoint) -> Result<f64> {
        if self.total_mass <= 0.0 {
            return Err(Error::EmptyGrid);
        }
        Ok(self.stats(z)?.cum_novelty / self.total_mass)
    }

    /// Immediate (single-step) visit mass of `z`'s cell divided by the total visit mass.
    pub fn normalized_immediate_count(&self, z: &LatentPoint) -> Result<f64> {
        if self.total_mass <= 0.0 {
            return Err(Error::EmptyGrid);
        }
        Ok(self.stats(z)?.visit_mass / self.total_mass)
    }

    /// Adds `−‖z_end − g_e‖` to the cell of the originally selected subgoal `g_t`.
    pub fn record_potential_sample(&mut self, g_t: &LatentPoint, g_e: &LatentPoint, z_end: &LatentPoint) -> Result<()> {
        self.record_potential_sample_weighted(g_t, g_e, z_end, 1.0)
    }

    pub fn record_potential_sample_weighted(
        &mut self,
        g_t: &LatentPoint,
        g_e: &LatentPoint,
        z_end: &LatentPoint,
        weight: f64,
    ) -> Result<()> {
        let key = self.cell_of(g_t)?;
        let cell = self.cells.entry(key).or_default();
        cell.potential_sum -= weight * z_end.distance(g_e);
        cell.potential_weight += weight;
        Ok(())
    }

    /// Mean recorded potential of `z`'s cell; 0 for cells without samples.
    pub fn potential(&self, z: &LatentPoint) -> Result<f64> {
        let c = self.stats(z)?;
        Ok(if c.potential_weight > 0.0 {
            c.potential_sum / c.potential_weight
        } else {
            0.0
        })
    }

    /// Clears and replays stored episodes (oldest first) under a new encoder. The newest
    /// episode gets weight 1, each older one a further factor of `ema_gamma`.
    pub fn rebuild<'a, I, F>(&mut self, episodes: I, mut encode: F, d_e: f64) -> Result<()>
    where
        I: IntoIterator<Item = &'a EpisodeTrace>,
        I::IntoIter: ExactSizeIterator,
        F: FnMut(&[&[f64]]) -> Result<Vec<LatentPoint>>,
    {
        self.clear();
        let episodes = episodes.into_iter();
        let n = episodes.len();
        for (i, ep) in episodes.enumerate() {
            let weight = self.cfg.ema_gamma.powi((n - 1 - i) as i32);
            let states: Vec<&[f64]> = ep.boundary_states.iter().map(Vec::as_slice).collect();
            let chain = encode(&states)?;
            self.record_trajectory_weighted(&chain, weight)?;
            for p in &ep.potential_samples {
                let z = encode(&[&p.candidate_state, &p.start_state, &p.end_state])?;
                let g_e = imagined_subgoal_with(&z[0], &z[1], d_e, || p.direction.clone());
                self.record_potential_sample_weighted(&z[0], &g_e, &z[2], weight)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p(x: f64, y: f64) -> LatentPoint {
        LatentPoint::new(vec![x, y])
    }

    #[test]
    fn cell_floor_semantics() {
        assert_eq!(cell_of(&p(0.0, 0.0), 3.0).unwrap(), CellKey(vec![0, 0]));
        assert_eq!(cell_of(&p(3.0, -0.1), 3.0).unwrap(), CellKey(vec![1, -1]));
        assert_eq!(cell_of(&p(7.4, 2.9), 3.0).unwrap(), CellKey(vec![2, 0]));
        assert!(cell_of(&p(f64::NAN, 0.0), 3.0).is_err());
    }

    #[test]
    fn decay_per_episode() {
        let mut g = LatentGrid::new(GridConfig::default());
        g.begin_episode_decay();
        assert_eq!(g.num_cells(), 0);
        g.record_trajectory(&[p(0.0, 0.0)]).unwrap();
        g.begin_episode_decay();
        assert!((g.stats(&p(0.0, 0.0)).unwrap().visit_mass - 0.995).abs() < 1e-15);
        for _ in 0..99 {
            g.begin_episode_decay();
        }
        let m = g.stats(&p(0.0, 0.0)).unwrap().visit_mass;
        assert!((m - 0.995f64.powi(100)).abs() < 1e-12);
        assert!((m - 0.606).abs() < 1e-3);
    }

    #[test]
    fn backward_pass_accumulates_cumulative_counts() {
        let mut g = LatentGrid::new(GridConfig::default());
        g.record_trajectory(&[p(0.0, 0.0), p(4.0, 0.0), p(7.0, 0.0)]).unwrap();
        let n = |x| g.stats(&p(x, 0.0)).unwrap().cum_novelty;
        assert!((n(0.0) - 2.9701).abs() < 1e-12);
        assert!((n(4.0) - 1.99).abs() < 1e-12);
        assert!((n(7.0) - 1.0).abs() < 1e-12);
        assert!((g.normalized_novelty(&p(0.0, 0.0)).unwrap() - 2.9701 / 3.0).abs() < 1e-12);
        assert_eq!(g.normalized_novelty(&p(100.0, 0.0)).unwrap(), 0.0);

        let mut g = LatentGrid::new(GridConfig::default());
        g.record_trajectory(&[p(0.0, 0.0)]).unwrap();
        assert_eq!(g.stats(&p(0.0, 0.0)).unwrap().cum_novelty, 1.0);
        assert_eq!(g.normalized_novelty(&p(0.0, 0.0)).unwrap(), 1.0);

        // revisit: chain A, B, A → A gets 2.9701 + 1.0
        let mut g = LatentGrid::new(GridConfig::default());
        g.record_trajectory(&[p(0.0, 0.0), p(4.0, 0.0), p(1.0, 1.0)]).unwrap();
        assert!((g.stats(&p(0.0, 0.0)).unwrap().cum_novelty - 3.9701).abs() < 1e-12);
        assert_eq!(g.stats(&p(0.0, 0.0)).unwrap().visit_mass, 2.0);
    }

    #[test]
    fn empty_grid_novelty_is_an_error() {
        let g = LatentGrid::new(GridConfig::default());
        assert!(matches!(g.normalized_novelty(&p(0.0, 0.0)), Err(Error::EmptyGrid)));
    }

    #[test]
    fn imagined_subgoal_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(imagined_subgoal(&p(1.0, 0.0), &p(0.0, 0.0), 5.0, &mut rng), p(6.0, 0.0));
        assert_eq!(imagined_subgoal(&p(1.0, 2.0), &p(0.0, 0.0), 0.0, &mut rng), p(1.0, 2.0));
        let g = imagined_subgoal(&p(3.0, 4.0), &p(0.0, 0.0), 5.0, &mut rng);
        assert!((g.0[0] - 6.0).abs() < 1e-12 && (g.0[1] - 8.0).abs() < 1e-12);
        let d = imagined_subgoal(&p(1.0, 1.0), &p(1.0, 1.0), 2.0, &mut rng);
        assert!((d.distance(&p(1.0, 1.0)) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn potential_averages_samples() {
        let mut g = LatentGrid::new(GridConfig::default());
        assert_eq!(g.potential(&p(0.0, 0.0)).unwrap(), 0.0);
        g.record_potential_sample(&p(0.0, 0.0), &p(1.0, 1.0), &p(1.0, 1.0)).unwrap();
        assert_eq!(g.potential(&p(0.0, 0.0)).unwrap(), 0.0);
        let mut g = LatentGrid::new(GridConfig::default());
        g.record_potential_sample(&p(0.0, 0.0), &p(5.0, 0.0), &p(0.0, 0.0)).unwrap();
        assert_eq!(g.potential(&p(0.5, 0.5)).unwrap(), -5.0);
        let mut g = LatentGrid::new(GridConfig::default());
        g.record_potential_sample(&p(0.0, 0.0), &p(2.0, 0.0), &p(0.0, 0.0)).unwrap();
        g.record_potential_sample(&p(0.0, 0.0), &p(0.0, 4.0), &p(0.0, 0.0)).unwrap();
        assert_eq!(g.potential(&p(0.0, 0.0)).unwrap(), -3.0);
        g.begin_episode_decay();
        assert!((g.potential(&p(0.0, 0.0)).unwrap() + 3.0).abs() < 1e-12);
    }

    fn trace(xs: &[f64]) -> EpisodeTrace {
        EpisodeTrace {
            boundary_states: xs.iter().map(|&x| vec![x, 0.0]).collect(),
            potential_samples: vec![PotentialTrace {
                candidate_state: vec![xs[0] + 1.0, 0.0],
                start_state: vec![xs[0], 0.0],
                end_state: vec![xs[0] + 0.5, 0.0],
                direction: vec![1.0, 0.0],
            }],
        }
    }

    fn identity(states: &[&[f64]]) -> Result<Vec<LatentPoint>> {
        Ok(states.iter().map(|s| LatentPoint::new(s.to_vec())).collect())
    }

    #[test]
    fn rebuild_matches_incremental_recording() {
        let eps = [trace(&[0.0, 4.0, 8.0]), trace(&[1.0, 10.0])];
        let mut inc = LatentGrid::new(GridConfig::default());
        for ep in &eps {
            inc.begin_episode_decay();
            let chain = identity(&ep.boundary_states.iter().map(Vec::as_slice).collect::<Vec<_>>()).unwrap();
            inc.record_trajectory(&chain).unwrap();
            let pt = &ep.potential_samples[0];
            let g_t = LatentPoint::new(pt.candidate_state.clone());
            let z = LatentPoint::new(pt.start_state.clone());
            let g_e = imagined_subgoal_with(&g_t, &z, 5.0, || unreachable!());
            inc.record_potential_sample(&g_t, &g_e, &LatentPoint::new(pt.end_state.clone())).unwrap();
        }
        let mut rebuilt = LatentGrid::new(GridConfig::default());
        rebuilt.record_trajectory(&[p(50.0, 50.0)]).unwrap();
        rebuilt.rebuild(eps.iter(), identity, 5.0).unwrap();
        assert!((inc.total_mass() - rebuilt.total_mass()).abs() < 1e-9);
        assert_eq!(inc.num_cells(), rebuilt.num_cells());
        for ((ka, a), (kb, b)) in inc.cells().zip(rebuilt.cells()) {
            assert_eq!(ka, kb);
            assert!((a.visit_mass - b.visit_mass).abs() < 1e-9);
            assert!((a.cum_novelty - b.cum_novelty).abs() < 1e-9);
            assert!((a.potential_sum - b.potential_sum).abs() < 1e-9);
            assert!((a.potential_weight - b.potential_weight).abs() < 1e-9);
        }
        // older episode carries weight 0.995
        assert!((rebuilt.stats(&p(4.0, 0.0)).unwrap().visit_mass - 0.995).abs() < 1e-12);
    }
}
