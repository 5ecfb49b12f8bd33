use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

/// Priority floor so zero-loss triplets stay sampleable.
pub const PRIORITY_EPS: f64 = 1e-3;
/// Above this many triplets a refresh recomputes losses on a uniform subsample.
pub const REFRESH_CAP: usize = 50_000;

/// `(s_t, s_{t+1}, s_{t+c})` drawn from one stored trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Triplet {
    pub episode: u64,
    pub anchor_index: usize,
    pub positive_index: usize,
    pub negative_index: usize,
    pub cached_loss: f64,
    pub stability_anchor: bool,
    /// Insertion order; the deterministic tie-break when ranking.
    pub ordinal: u64,
}

#[derive(Clone, Debug)]
struct StoredEpisode {
    id: u64,
    states: Vec<Vec<f64>>,
}

/// Trajectory storage that exposes its `c`-spaced triplets for representation learning.
#[derive(Clone, Debug)]
pub struct TripletStore {
    c: usize,
    capacity_states: usize,
    total_states: usize,
    episodes: VecDeque<StoredEpisode>,
    triplets: VecDeque<Triplet>,
    next_episode: u64,
    next_ordinal: u64,
    /// Cumulative priorities, rebuilt lazily after any change.
    cumulative: Vec<f64>,
    dirty: bool,
}

impl TripletStore {
    pub fn new(c: usize, capacity_states: usize) -> Result<Self> {
        if c == 0 || capacity_states == 0 {
            return Err(Error::Contract("triplet store needs c ≥ 1 and capacity ≥ 1".into()));
        }
        Ok(Self {
            c,
            capacity_states,
            total_states: 0,
            episodes: VecDeque::new(),
            triplets: VecDeque::new(),
            next_episode: 0,
            next_ordinal: 0,
            cumulative: Vec::new(),
            dirty: true,
        })
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn num_states(&self) -> usize {
        self.total_states
    }

    pub fn triplets(&self) -> impl Iterator<Item = &Triplet> {
        self.triplets.iter()
    }

    pub fn triplet(&self, i: usize) -> &Triplet {
        &self.triplets[i]
    }

    /// Stores the visited states `s_0 … s_T` of one episode; returns its id.
    pub fn push_episode(&mut self, states: Vec<Vec<f64>>) -> u64 {
        let id = self.next_episode;
        self.next_episode += 1;
        let n = states.len();
        for t in 0..(n.saturating_sub(self.c)) {
            self.triplets.push_back(Triplet {
                episode: id,
                anchor_index: t,
                positive_index: t + 1,
                negative_index: t + self.c,
                cached_loss: 0.0,
                stability_anchor: false,
                ordinal: self.next_ordinal,
            });
            self.next_ordinal += 1;
        }
        self.total_states += n;
        self.episodes.push_back(StoredEpisode { id, states });
        while self.total_states > self.capacity_states && self.episodes.len() > 1 {
            let old = self.episodes.pop_front().unwrap();
            self.total_states -= old.states.len();
            while self.triplets.front().is_some_and(|t| t.episode == old.id) {
                self.triplets.pop_front();
            }
        }
        self.dirty = true;
        id
    }

    fn episode(&self, id: u64) -> &StoredEpisode {
        let first = self.episodes.front().expect("store is non-empty").id;
        &self.episodes[(id - first) as usize]
    }

    /// Anchor, positive and negative states of triplet `i`.
    pub fn states(&self, i: usize) -> (&[f64], &[f64], &[f64]) {
        let t = &self.triplets[i];
        let ep = self.episode(t.episode);
        (
            &ep.states[t.anchor_index],
            &ep.states[t.positive_index],
            &ep.states[t.negative_index],
        )
    }

    pub fn anchor_state(&self, i: usize) -> &[f64] {
        self.states(i).0
    }

    /// Samples triplet indices with probability proportional to `cached_loss + ε`.
    pub fn sample_prioritized<R: Rng + ?Sized>(
        &mut self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        self.require_triplets()?;
        if self.dirty {
            self.rebuild_cumulative();
        }
        let total = *self.cumulative.last().unwrap();
        Ok((0..batch_size)
            .map(|_| {
                let u = rng.gen::<f64>() * total;
                self.cumulative
                    .partition_point(|&c| c <= u)
                    .min(self.cumulative.len() - 1)
            })
            .collect())
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
        self.require_triplets()?;
        Ok((0..batch_size)
            .map(|_| rng.gen_range(0..self.triplets.len()))
            .collect())
    }

    fn require_triplets(&self) -> Result<()> {
        if self.triplets.is_empty() {
            return Err(Error::NoTriplet(format!(
                "no stored episode has more than c = {} transitions",
                self.c
            )));
        }
        Ok(())
    }

    fn rebuild_cumulative(&mut self) {
        self.cumulative.clear();
        let mut acc = 0.0;
        for t in &self.triplets {
            acc += t.cached_loss.max(0.0) + PRIORITY_EPS;
            self.cumulative.push(acc);
        }
        self.dirty = false;
    }

    /// Recomputes cached triplet losses with `loss_of` (which receives a slice of triplet
    /// indices and returns one loss each), then flags the `⌈k·count⌉` lowest-loss
    /// triplets as stability anchors. Ties are broken by insertion order. Above
    /// [`REFRESH_CAP`] triplets only a uniform subsample is recomputed.
    pub fn refresh_priorities_and_rank<R, F>(&mut self, mut loss_of: F, k_fraction: f64, rng: &mut R)
    where
        R: Rng + ?Sized,
        F: FnMut(&TripletStore, &[usize]) -> Vec<f64>,
    {
        let n = self.triplets.len();
        if n == 0 {
            return;
        }
        let chosen: Vec<usize> = if n > REFRESH_CAP {
            let mut v = index::sample(rng, n, REFRESH_CAP).into_vec();
            v.sort_unstable();
            v
        } else {
            (0..n).collect()
        };
        for chunk in chosen.chunks(4096) {
            let losses = loss_of(self, chunk);
            for (&i, l) in chunk.iter().zip(losses) {
                self.triplets[i].cached_loss = l;
            }
        }
        self.rank_anchors(k_fraction);
        self.dirty = true;
    }

    /// Flags exactly `⌈k·count⌉` triplets with the smallest cached loss.
    pub fn rank_anchors(&mut self, k_fraction: f64) {
        let n = self.triplets.len();
        let k = k_fraction.clamp(0.0, 1.0);
        let count = ((k * n as f64) - 1e-9).ceil().max(0.0) as usize;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            let (ta, tb) = (&self.triplets[a], &self.triplets[b]);
            ta.cached_loss
                .total_cmp(&tb.cached_loss)
                .then(ta.ordinal.cmp(&tb.ordinal))
        });
        for t in self.triplets.iter_mut() {
            t.stability_anchor = false;
        }
        for &i in order.iter().take(count.min(n)) {
            self.triplets[i].stability_anchor = true;
        }
    }

    /// Indices of triplets currently flagged as stability anchors.
    pub fn anchor_indices(&self) -> Vec<usize> {
        self.triplets
            .iter()
            .enumerate()
            .filter(|(_, t)| t.stability_anchor)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn set_cached_loss(&mut self, i: usize, loss: f64) {
        self.triplets[i].cached_loss = loss;
        self.dirty = true;
    }
}
