//! The learned subgoal space φ: a small network trained with a temporal triplet
//! objective plus a state-specific penalty that pins already well-fit embeddings
//! to their values from before the current update round.

use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approximator::{snapshot, Activation, AdamState, Gradients, Mlp};
use crate::error::{contract, Result};
use crate::latent::LatentPoint;
use crate::replay::TripletStore;

/// How λ(s) is assigned to anchor states.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    /// λ₀ on the lowest-loss fraction of triplets, 0 elsewhere.
    Binary,
    /// λ₀ / sqrt(1 + L_tri) on every anchor.
    Continuous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReprConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub margin: f64,
    pub lambda0: f64,
    pub k_fraction: f64,
    pub lambda_mode: LambdaMode,
    /// Episodes between updates.
    pub update_interval: usize,
    pub minibatches: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Loss-proportional triplet sampling; uniform when off.
    pub prioritized: bool,
}

impl Default for ReprConfig {
    fn default() -> Self {
        Self {
            latent_dim: 2,
            hidden: 64,
            margin: 2.0,
            lambda0: 0.1,
            k_fraction: 0.3,
            lambda_mode: LambdaMode::Binary,
            update_interval: 100,
            minibatches: 2000,
            learning_rate: 1e-4,
            batch_size: 100,
            prioritized: true,
        }
    }
}

impl ReprConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin <= 0.0 {
            return contract("margin must be positive");
        }
        if !(0.0..=1.0).contains(&self.k_fraction) {
            return contract("k_fraction must lie in [0, 1]");
        }
        if self.lambda0 < 0.0 {
            return contract("lambda0 must be non-negative");
        }
        if self.latent_dim == 0 || self.hidden == 0 || self.batch_size == 0 || self.update_interval == 0 {
            return contract("representation sizes and interval must be positive");
        }
        Ok(())
    }
}

/// `‖z_t − z_{t+1}‖ + max(0, δ − ‖z_t − z_{t+c}‖)`.
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> f64 {
    let pos = crate::latent::l2(anchor, positive);
    let neg = crate::latent::l2(anchor, negative);
    pos + (margin - neg).max(0.0)
}

/// Loss and its gradients with respect to the three embeddings.
fn triplet_loss_grads(
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
    margin: f64,
) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = anchor.len();
    let dp: Vec<f64> = (0..d).map(|k| anchor[k] - positive[k]).collect();
    let dn: Vec<f64> = (0..d).map(|k| anchor[k] - negative[k]).collect();
    let pos = norm(&dp);
    let neg = norm(&dn);
    let mut ga = vec![0.0; d];
    let mut gp = vec![0.0; d];
    let mut gn = vec![0.0; d];
    if pos > NORM_FLOOR {
        for k in 0..d {
            ga[k] += dp[k] / pos;
            gp[k] -= dp[k] / pos;
        }
    }
    let hinge = margin - neg;
    if hinge > 0.0 && neg > NORM_FLOOR {
        for k in 0..d {
            ga[k] -= dn[k] / neg;
            gn[k] += dn[k] / neg;
        }
    }
    (pos + hinge.max(0.0), ga, gp, gn)
}

const NORM_FLOOR: f64 = 1e-12;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Inputs for one evaluation of the representation objective.
#[derive(Clone, Debug)]
pub struct ObjectiveBatch {
    pub anchors: Array2<f64>,
    pub positives: Array2<f64>,
    pub negatives: Array2<f64>,
    /// States entering the stability penalty and their weights λ(s).
    pub stability_states: Array2<f64>,
    pub lambdas: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ObjectiveValue {
    pub triplet: f64,
    pub stability: f64,
}

impl ObjectiveValue {
    pub fn total(&self) -> f64 {
        self.triplet + self.stability
    }
}

/// Summary of one representation update round.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReprUpdateReport {
    pub mean_triplet_loss: f64,
    pub mean_stability_loss: f64,
    pub anchor_count: usize,
    /// Mean ‖φ(s) − φ_old(s)‖ over stability-anchor states after the round.
    pub mean_anchor_displacement: f64,
    pub minibatches: usize,
}

/// Cap on anchor states used for the displacement diagnostic.
const DISPLACEMENT_SAMPLE: usize = 5000;

#[derive(Clone, Debug)]
pub struct SubgoalRepr {
    cfg: ReprConfig,
    phi: Mlp,
    phi_old: Mlp,
    adam: AdamState,
}

impl SubgoalRepr {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, cfg: ReprConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let phi = Mlp::new(
            &[obs_dim, cfg.hidden, cfg.latent_dim],
            Activation::Relu,
            Activation::Linear,
            rng,
        )?;
        Ok(Self::from_network(phi, cfg))
    }

    pub fn from_network(phi: Mlp, cfg: ReprConfig) -> Self {
        let adam = AdamState::new(&phi, cfg.learning_rate);
        Self {
            phi_old: snapshot(&phi),
            phi,
            adam,
            cfg,
        }
    }

    pub fn config(&self) -> &ReprConfig {
        &self.cfg
    }

    pub fn config_mut(&mut self) -> &mut ReprConfig {
        &mut self.cfg
    }

    pub fn phi(&self) -> &Mlp {
        &self.phi
    }

    pub fn phi_mut(&mut self) -> &mut Mlp {
        &mut self.phi
    }

    pub fn phi_old(&self) -> &Mlp {
        &self.phi_old
    }

    pub fn latent_dim(&self) -> usize {
        self.cfg.latent_dim
    }

    pub fn encode(&self, obs: &[f64]) -> Result<LatentPoint> {
        Ok(LatentPoint::new(self.phi.forward(obs)?))
    }

    pub fn encode_batch(&self, states: &[&[f64]]) -> Result<Vec<LatentPoint>> {
        encode_rows(&self.phi, states)
    }

    /// Mean over the batch of `λ(s) ‖φ(s) − φ_old(s)‖`.
    pub fn stability_loss(&self, states: &[&[f64]], lambdas: &[f64]) -> Result<f64> {
        if states.len() != lambdas.len() {
            return contract("one λ per stability state required");
        }
        if states.is_empty() {
            return Ok(0.0);
        }
        let now = encode_rows(&self.phi, states)?;
        let old = encode_rows(&self.phi_old, states)?;
        Ok(now
            .iter()
            .zip(&old)
            .zip(lambdas)
            .map(|((a, b), l)| l * a.distance(b))
            .sum::<f64>()
            / states.len() as f64)
    }

    /// Value of `mean L_tri + L_s` without gradients.
    pub fn objective_value(&self, batch: &ObjectiveBatch) -> Result<ObjectiveValue> {
        let (value, _) = self.evaluate(batch, false)?;
        Ok(value)
    }

    /// Value and parameter gradient of `mean L_tri + L_s`.
    pub fn objective(&self, batch: &ObjectiveBatch) -> Result<(ObjectiveValue, Gradients)> {
        let (value, grads) = self.evaluate(batch, true)?;
        Ok((value, grads.expect("gradients requested")))
    }

    fn evaluate(&self, batch: &ObjectiveBatch, want_grads: bool) -> Result<(ObjectiveValue, Option<Gradients>)> {
        let b = batch.anchors.nrows();
        let s_rows = batch.stability_states.nrows();
        if batch.positives.nrows() != b || batch.negatives.nrows() != b {
            return contract("triplet batch parts differ in length");
        }
        if batch.lambdas.len() != s_rows {
            return contract("one λ per stability state required");
        }
        let n = self.phi.input_dim();
        let rows = 3 * b + s_rows;
        let mut input = Array2::zeros((rows, n));
        input.slice_mut(s![0..b, ..]).assign(&batch.anchors);
        input.slice_mut(s![b..2 * b, ..]).assign(&batch.positives);
        input.slice_mut(s![2 * b..3 * b, ..]).assign(&batch.negatives);
        input.slice_mut(s![3 * b.., ..]).assign(&batch.stability_states);
        let cache = self.phi.forward_cached(input.view())?;
        let z = cache.output();
        let d = z.ncols();
        let mut adj = Array2::zeros((rows, d));
        let mut value = ObjectiveValue::default();
        if b > 0 {
            let inv_b = 1.0 / b as f64;
            for i in 0..b {
                let za = z.row(i).to_vec();
                let zp = z.row(b + i).to_vec();
                let zn = z.row(2 * b + i).to_vec();
                let (l, ga, gp, gn) = triplet_loss_grads(&za, &zp, &zn, self.cfg.margin);
                value.triplet += l * inv_b;
                for k in 0..d {
                    adj[[i, k]] += ga[k] * inv_b;
                    adj[[b + i, k]] += gp[k] * inv_b;
                    adj[[2 * b + i, k]] += gn[k] * inv_b;
                }
            }
        }
        if s_rows > 0 {
            let old = self.phi_old.forward_batch(batch.stability_states.view())?;
            let inv_s = 1.0 / s_rows as f64;
            for j in 0..s_rows {
                let lam = batch.lambdas[j];
                let diff: Vec<f64> = (0..d).map(|k| z[[3 * b + j, k]] - old[[j, k]]).collect();
                let dist = norm(&diff);
                value.stability += lam * dist * inv_s;
                if lam != 0.0 && dist > NORM_FLOOR {
                    for k in 0..d {
                        adj[[3 * b + j, k]] += lam * inv_s * diff[k] / dist;
                    }
                }
            }
        }
        if !want_grads {
            return Ok((value, None));
        }
        let (grads, _) = self.phi.backward(&cache, adj.view())?;
        Ok((value, Some(grads)))
    }

    fn triplet_losses(&self, store: &TripletStore, idx: &[usize]) -> Vec<f64> {
        let mut states: Vec<&[f64]> = Vec::with_capacity(3 * idx.len());
        for &i in idx {
            let (a, p, n) = store.states(i);
            states.extend([a, p, n]);
        }
        let z = encode_rows(&self.phi, &states).expect("stored states match φ input");
        z.chunks(3)
            .map(|t| triplet_loss(&t[0].0, &t[1].0, &t[2].0, self.cfg.margin))
            .collect()
    }

    /// Assembles a training batch: triplets (prioritised or uniform) and a stability
    /// batch of the same size. RNG consumption does not depend on λ₀, so paired runs
    /// that differ only in λ₀ see identical data.
    pub fn build_batch<R: Rng + ?Sized>(
        &self,
        store: &mut TripletStore,
        anchors: &[usize],
        rng: &mut R,
    ) -> Result<ObjectiveBatch> {
        let bs = self.cfg.batch_size;
        let idx = if self.cfg.prioritized {
            store.sample_prioritized(bs, rng)?
        } else {
            store.sample_uniform(bs, rng)?
        };
        let n = self.phi.input_dim();
        let mut a = Array2::zeros((bs, n));
        let mut p = Array2::zeros((bs, n));
        let mut ng = Array2::zeros((bs, n));
        for (r, &i) in idx.iter().enumerate() {
            let (sa, sp, sn) = store.states(i);
            a.row_mut(r).assign(&ndarray::ArrayView1::from(sa));
            p.row_mut(r).assign(&ndarray::ArrayView1::from(sp));
            ng.row_mut(r).assign(&ndarray::ArrayView1::from(sn));
        }
        let (stab_idx, lambdas): (Vec<usize>, Vec<f64>) = match self.cfg.lambda_mode {
            LambdaMode::Binary => {
                if anchors.is_empty() {
                    (Vec::new(), Vec::new())
                } else {
                    (0..bs)
                        .map(|_| (anchors[rng.gen_range(0..anchors.len())], self.cfg.lambda0))
                        .unzip()
                }
            }
            LambdaMode::Continuous => (0..bs)
                .map(|_| {
                    let i = rng.gen_range(0..store.len());
                    let l = store.triplet(i).cached_loss.max(0.0);
                    (i, self.cfg.lambda0 / (1.0 + l).sqrt())
                })
                .unzip(),
        };
        let mut st = Array2::zeros((stab_idx.len(), n));
        for (r, &i) in stab_idx.iter().enumerate() {
            st.row_mut(r).assign(&ndarray::ArrayView1::from(store.anchor_state(i)));
        }
        Ok(ObjectiveBatch {
            anchors: a,
            positives: p,
            negatives: ng,
            stability_states: st,
            lambdas,
        })
    }

    /// One scheduled update round: snapshot φ_old, refresh priorities and stability
    /// anchors, then run the configured number of minibatch steps.
    /// Returns `None` (after logging) when the store holds no triplet.
    pub fn update_representation<R: Rng + ?Sized>(
        &mut self,
        store: &mut TripletStore,
        rng: &mut R,
    ) -> Result<Option<ReprUpdateReport>> {
        self.phi_old = snapshot(&self.phi);
        if store.is_empty() {
            log::warn!("representation update skipped: no triplets stored");
            return Ok(None);
        }
        let k = self.cfg.k_fraction;
        store.refresh_priorities_and_rank(|st, idx| self.triplet_losses(st, idx), k, rng);
        let anchors = store.anchor_indices();
        let mut report = ReprUpdateReport {
            anchor_count: anchors.len(),
            minibatches: self.cfg.minibatches,
            ..Default::default()
        };
        for _ in 0..self.cfg.minibatches {
            let batch = self.build_batch(store, &anchors, rng)?;
            let (value, grads) = self.objective(&batch)?;
            self.adam.step(&mut self.phi, &grads)?;
            report.mean_triplet_loss += value.triplet;
            report.mean_stability_loss += value.stability;
        }
        if self.cfg.minibatches > 0 {
            report.mean_triplet_loss /= self.cfg.minibatches as f64;
            report.mean_stability_loss /= self.cfg.minibatches as f64;
        }
        report.mean_anchor_displacement = self.anchor_displacement(store, &anchors)?;
        Ok(Some(report))
    }

    /// Mean ‖φ(s) − φ_old(s)‖ over (up to a cap of) the given anchor triplets' states.
    pub fn anchor_displacement(&self, store: &TripletStore, anchors: &[usize]) -> Result<f64> {
        if anchors.is_empty() {
            return Ok(0.0);
        }
        let step = anchors.len().div_ceil(DISPLACEMENT_SAMPLE).max(1);
        let states: Vec<&[f64]> = anchors
            .iter()
            .step_by(step)
            .map(|&i| store.anchor_state(i))
            .collect();
        let now = encode_rows(&self.phi, &states)?;
        let old = encode_rows(&self.phi_old, &states)?;
        Ok(now.iter().zip(&old).map(|(a, b)| a.distance(b)).sum::<f64>() / states.len() as f64)
    }
}

fn encode_rows(net: &Mlp, states: &[&[f64]]) -> Result<Vec<LatentPoint>> {
    if states.is_empty() {
        return Ok(Vec::new());
    }
    let n = net.input_dim();
    let mut x = Array2::zeros((states.len(), n));
    for (r, s) in states.iter().enumerate() {
        if s.len() != n {
            return contract(format!("state length {} differs from φ input {n}", s.len()));
        }
        x.row_mut(r).assign(&ndarray::ArrayView1::from(*s));
    }
    let z = net.forward_batch(x.view())?;
    Ok(z.outer_iter().map(|r| LatentPoint::new(r.to_vec())).collect())
}
