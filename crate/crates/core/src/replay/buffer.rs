use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::latent::LatentPoint;

/// Anything that carries an environment observation.
pub trait HasState {
    fn state(&self) -> &[f64];
}

/// One primitive step as seen by the low level.
#[derive(Clone, Debug, PartialEq)]
pub struct LowTransition {
    pub obs: Vec<f64>,
    /// `obs ‖ φ(obs)` at collection time.
    pub low_obs: Vec<f64>,
    pub action: Vec<f64>,
    pub intrinsic_reward: f64,
    pub next_obs: Vec<f64>,
    pub next_low_obs: Vec<f64>,
    pub subgoal: LatentPoint,
    pub done: bool,
}

impl HasState for LowTransition {
    fn state(&self) -> &[f64] {
        &self.obs
    }
}

/// One `c`-step segment as seen by the high level.
#[derive(Clone, Debug, PartialEq)]
pub struct HighTransition {
    pub obs: Vec<f64>,
    /// Executed subgoal in latent coordinates.
    pub subgoal: LatentPoint,
    /// Subgoal offset fed to the high-level critic (clipped into the action box).
    pub action: Vec<f64>,
    /// Scaled sum of the segment's rewards.
    pub external_return: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
    pub episode_id: u64,
    pub step_index: usize,
}

impl HasState for HighTransition {
    fn state(&self) -> &[f64] {
        &self.obs
    }
}

/// A buffer state that passed the radius test, with its embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub state: Vec<f64>,
    pub latent: LatentPoint,
}

/// FIFO replay storage with uniform sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer<T> {
    items: VecDeque<T>,
    capacity: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Contract("replay capacity must be ≥ 1".into()));
        }
        Ok(Self {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
        })
    }

    pub fn append(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, index: usize) -> Option<&T> {
        self.items.get(index)
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    /// I.i.d. uniform indices, with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::EmptyBatch("cannot sample from an empty buffer".into()));
        }
        Ok((0..batch_size)
            .map(|_| rng.gen_range(0..self.items.len()))
            .collect())
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&T>> {
        Ok(self
            .sample_indices(batch_size, rng)?
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}

impl<T: HasState> ReplayBuffer<T> {
    /// Rejection-samples up to `m` stored states whose embedding lies within `radius`
    /// of `center`. Draws are uniform over the buffer, in rounds of `m`, with a total
    /// budget of `20 m` attempts. Fewer than `m` (possibly zero) results mean the
    /// budget ran out.
    pub fn sample_candidates_within_radius<R, F>(
        &self,
        mut encode: F,
        center: &LatentPoint,
        radius: f64,
        m: usize,
        rng: &mut R,
    ) -> Vec<Candidate>
    where
        R: Rng + ?Sized,
        F: FnMut(&[&[f64]]) -> Vec<LatentPoint>,
    {
        let mut out = Vec::new();
        if self.items.is_empty() || m == 0 {
            return out;
        }
        let budget = 20 * m;
        let mut attempts = 0;
        while out.len() < m && attempts < budget {
            let round = m.min(budget - attempts);
            attempts += round;
            let picks: Vec<&T> = (0..round)
                .map(|_| &self.items[rng.gen_range(0..self.items.len())])
                .collect();
            let states: Vec<&[f64]> = picks.iter().map(|t| t.state()).collect();
            let latents = encode(&states);
            for (state, latent) in states.into_iter().zip(latents) {
                if out.len() == m {
                    break;
                }
                if latent.distance(center) <= radius {
                    out.push(Candidate {
                        state: state.to_vec(),
                        latent,
                    });
                }
            }
        }
        out
    }
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:?}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Writes one low-level transition per line. Columns (tab separated):
/// `obs  low_obs  action  intrinsic_reward  next_obs  next_low_obs  subgoal  done`,
/// vector columns space separated.
pub fn dump_low(buffer: &ReplayBuffer<LowTransition>, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "obs\tlow_obs\taction\tintrinsic_reward\tnext_obs\tnext_low_obs\tsubgoal\tdone")?;
    for t in buffer.iter() {
        writeln!(
            f,
            "{}\t{}\t{}\t{:?}\t{}\t{}\t{}\t{}",
            join(&t.obs),
            join(&t.low_obs),
            join(&t.action),
            t.intrinsic_reward,
            join(&t.next_obs),
            join(&t.next_low_obs),
            join(t.subgoal.as_slice()),
            u8::from(t.done)
        )?;
    }
    Ok(())
}

/// Columns: `episode_id  step_index  obs  subgoal  action  external_return  next_obs  done`.
pub fn dump_high(buffer: &ReplayBuffer<HighTransition>, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "episode_id\tstep_index\tobs\tsubgoal\taction\texternal_return\tnext_obs\tdone")?;
    for t in buffer.iter() {
        writeln!(
            f,
            "{}\t{}\t{}\t{}\t{}\t{:?}\t{}\t{}",
            t.episode_id,
            t.step_index,
            join(&t.obs),
            join(t.subgoal.as_slice()),
            join(&t.action),
            t.external_return,
            join(&t.next_obs),
            u8::from(t.done)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct S(Vec<f64>);
    impl HasState for S {
        fn state(&self) -> &[f64] {
            &self.0
        }
    }

    fn identity(states: &[&[f64]]) -> Vec<LatentPoint> {
        states.iter().map(|s| LatentPoint::new(s.to_vec())).collect()
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(2).unwrap();
        b.append('a');
        assert_eq!(b.len(), 1);
        b.append('b');
        b.append('c');
        assert_eq!(b.iter().copied().collect::<String>(), "bc");
        let mut b = ReplayBuffer::new(10).unwrap();
        for i in 0..5 {
            b.append(i);
        }
        assert_eq!(b.iter().copied().collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
        assert!(ReplayBuffer::<u8>::new(0).is_err());
    }

    #[test]
    fn uniform_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = ReplayBuffer::new(4).unwrap();
        assert!(matches!(b.sample_uniform(3, &mut rng), Err(Error::EmptyBatch(_))));
        b.append(42);
        assert_eq!(b.sample_uniform(4, &mut rng).unwrap(), vec![&42; 4]);

        let mut b = ReplayBuffer::new(10).unwrap();
        for i in 0..10 {
            b.append(i);
        }
        let draws = 10_000;
        let mut counts = [0usize; 10];
        for i in b.sample_indices(draws, &mut rng).unwrap() {
            counts[i] += 1;
        }
        // multinomial: sd = sqrt(n p (1-p)) = 30
        for c in counts {
            assert!((c as f64 - 1000.0).abs() < 90.0, "count {c}");
        }
        let a = b.sample_indices(32, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let c = b.sample_indices(32, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn candidates_respect_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut b = ReplayBuffer::new(100).unwrap();
        for i in 0..100 {
            b.append(S(vec![(i % 10) as f64, (i / 10) as f64]));
        }
        let center = LatentPoint::new(vec![4.0, 4.0]);
        let got = b.sample_candidates_within_radius(identity, &center, 2.5, 50, &mut rng);
        assert_eq!(got.len(), 50);
        for c in &got {
            assert!(c.latent.distance(&center) <= 2.5);
            assert_eq!(c.state, c.latent.0);
        }
        let all = b.sample_candidates_within_radius(identity, &center, 100.0, 30, &mut rng);
        assert_eq!(all.len(), 30);
        let off = LatentPoint::new(vec![0.5, 0.5]);
        assert!(b
            .sample_candidates_within_radius(identity, &off, 0.0, 10, &mut rng)
            .is_empty());
    }
}
