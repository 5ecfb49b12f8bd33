use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{contract, Result};

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_NET_ID.fetch_add(1, Ordering::Relaxed)
}

/// Elementwise nonlinearity applied after an affine layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(Activation::Linear),
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }

    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Linear => {}
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
        }
    }

    /// Multiplies `delta` by the derivative, given the pre-activation `z` and output `a`.
    fn backprop(self, delta: &mut Array2<f64>, z: &Array2<f64>, a: &Array2<f64>) {
        match self {
            Activation::Linear => {}
            Activation::Relu => delta.zip_mut_with(z, |d, &zv| {
                if zv <= 0.0 {
                    *d = 0.0
                }
            }),
            Activation::Tanh => delta.zip_mut_with(a, |d, &av| *d *= 1.0 - av * av),
        }
    }
}

/// One affine layer. `weight` is `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Parameter-shaped container, used for gradients and optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Dense::zeros(l.input_dim(), l.output_dim()))
                .collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Flat accessor in the same order as [`Mlp::param`].
    pub fn get(&self, index: usize) -> f64 {
        let (layer, slot) = locate(&self.layers, index);
        read_slot(&self.layers[layer], slot)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weight *= factor;
            l.bias *= factor;
        }
    }

    /// `self += factor * other`
    pub fn add_scaled(&mut self, other: &Gradients, factor: f64) -> Result<()> {
        if !same_shapes(&self.layers, &other.layers) {
            return contract("gradient shapes differ");
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.scaled_add(factor, &b.weight);
            a.bias.scaled_add(factor, &b.bias);
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Activations recorded by [`Mlp::forward_cached`] for a later backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    net_id: u64,
    version: u64,
    /// Input to each layer (`inputs[0]` is the network input).
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn batch_size(&self) -> usize {
        self.output.nrows()
    }
}

/// Fully connected network: rectifier (or chosen) hidden activations and a configurable output.
#[derive(Debug)]
pub struct Mlp {
    layers: Vec<Dense>,
    hidden: Activation,
    output: Activation,
    id: u64,
    version: u64,
}

impl Clone for Mlp {
    fn clone(&self) -> Self {
        Self {
            layers: self.layers.clone(),
            hidden: self.hidden,
            output: self.output,
            id: fresh_id(),
            version: 0,
        }
    }
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.hidden == other.hidden && self.output == other.output
    }
}

impl Mlp {
    /// Fan-in scaled uniform initialisation, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(sizes, hidden, output)?;
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.input_dim() as f64).sqrt();
            layer.weight.mapv_inplace(|_| rng.gen_range(-bound..bound));
            layer.bias.mapv_inplace(|_| rng.gen_range(-bound..bound));
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return contract(format!("invalid layer sizes {sizes:?}"));
        }
        let layers = sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Ok(Self {
            layers,
            hidden,
            output,
            id: fresh_id(),
            version: 0,
        })
    }

    pub fn from_layers(layers: Vec<Dense>, hidden: Activation, output: Activation) -> Result<Self> {
        if layers.is_empty() {
            return contract("network needs at least one layer");
        }
        for l in &layers {
            if l.bias.len() != l.output_dim() {
                return contract("bias length differs from layer output size");
            }
        }
        for w in layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return contract(format!(
                    "layer output {} does not feed next input {}",
                    w[0].output_dim(),
                    w[1].input_dim()
                ));
            }
        }
        Ok(Self {
            layers,
            hidden,
            output,
            id: fresh_id(),
            version: 0,
        })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Direct mutable access; bumps the version so older caches are rejected.
    pub fn layers_mut(&mut self) -> &mut [Dense] {
        self.version += 1;
        &mut self.layers
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].input_dim()];
        sizes.extend(self.layers.iter().map(Dense::output_dim));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Flat parameter view: per layer, weights row-major then biases.
    pub fn param(&self, index: usize) -> f64 {
        let (layer, slot) = locate(&self.layers, index);
        read_slot(&self.layers[layer], slot)
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        let (layer, slot) = locate(&self.layers, index);
        let l = &mut self.layers[layer];
        let nw = l.weight.len();
        if slot < nw {
            let cols = l.weight.ncols();
            l.weight[[slot / cols, slot % cols]] = value;
        } else {
            l.bias[slot - nw] = value;
        }
        self.version += 1;
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    fn activation_for(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| crate::error::Error::Contract(e.to_string()))?;
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    /// Row-batched forward pass without recording activations.
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(input.ncols())?;
        let mut x = affine(&self.layers[0], input);
        self.activation_for(0).apply(&mut x);
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            let mut z = affine(layer, x.view());
            self.activation_for(i).apply(&mut z);
            x = z;
        }
        Ok(x)
    }

    /// Forward pass that keeps what [`Mlp::backward`] needs.
    pub fn forward_cached(&self, input: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(input.ncols())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = affine(layer, x.view());
            let mut a = z.clone();
            self.activation_for(i).apply(&mut a);
            inputs.push(x);
            pre.push(z);
            x = a;
        }
        Ok(ForwardCache {
            net_id: self.id,
            version: self.version,
            inputs,
            pre,
            output: x,
        })
    }

    /// Reverse-mode pass. `d_output` is the adjoint of the (summed) scalar loss with
    /// respect to the cached output. Returns parameter gradients and the input adjoint.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_output: ArrayView2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        if cache.net_id != self.id || cache.version != self.version {
            return contract("activation cache is stale or belongs to another network");
        }
        if d_output.dim() != cache.output.dim() {
            return contract(format!(
                "output adjoint shape {:?} differs from cached output {:?}",
                d_output.dim(),
                cache.output.dim()
            ));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = d_output.to_owned();
        for i in (0..self.layers.len()).rev() {
            let out = if i + 1 == self.layers.len() {
                &cache.output
            } else {
                &cache.inputs[i + 1]
            };
            self.activation_for(i).backprop(&mut delta, &cache.pre[i], out);
            let weight = delta.t().dot(&cache.inputs[i]);
            let bias = delta.sum_axis(Axis(0));
            let next = delta.dot(&self.layers[i].weight);
            grads.push(Dense { weight, bias });
            delta = next;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return contract(format!(
                "input length {cols} differs from network input size {}",
                self.input_dim()
            ));
        }
        Ok(())
    }

    /// In-place `self -= step` over all parameters; used by the optimizer.
    pub(crate) fn apply_delta(&mut self, delta: &Gradients) {
        for (l, d) in self.layers.iter_mut().zip(&delta.layers) {
            l.weight -= &d.weight;
            l.bias -= &d.bias;
        }
        self.version += 1;
    }

    pub fn same_topology(&self, other: &Mlp) -> bool {
        same_shapes(&self.layers, &other.layers)
    }

    pub fn same_topology_as(&self, grads: &Gradients) -> bool {
        same_shapes(&self.layers, &grads.layers)
    }
}

/// Deep, independent copy of a network.
pub fn snapshot(net: &Mlp) -> Mlp {
    net.clone()
}

/// Polyak averaging: `target <- (1 - tau) * target + tau * online`.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return contract(format!("soft update rate {tau} outside [0, 1]"));
    }
    if !target.same_topology(online) {
        return contract("soft update between networks of different shapes");
    }
    if tau == 1.0 {
        for (t, o) in target.layers.iter_mut().zip(&online.layers) {
            t.weight.assign(&o.weight);
            t.bias.assign(&o.bias);
        }
    } else if tau > 0.0 {
        for (t, o) in target.layers.iter_mut().zip(&online.layers) {
            t.weight.zip_mut_with(&o.weight, |a, &b| *a = (1.0 - tau) * *a + tau * b);
            t.bias.zip_mut_with(&o.bias, |a, &b| *a = (1.0 - tau) * *a + tau * b);
        }
    }
    target.version += 1;
    Ok(())
}

fn affine(layer: &Dense, x: ArrayView2<f64>) -> Array2<f64> {
    let mut z = x.dot(&layer.weight.t());
    z += &layer.bias.view().insert_axis(Axis(0));
    z
}

fn same_shapes(a: &[Dense], b: &[Dense]) -> bool {
    a.len() == b.len()
        && a
            .iter()
            .zip(b)
            .all(|(x, y)| x.weight.dim() == y.weight.dim() && x.bias.len() == y.bias.len())
}

fn locate(layers: &[Dense], mut index: usize) -> (usize, usize) {
    for (i, l) in layers.iter().enumerate() {
        let n = l.weight.len() + l.bias.len();
        if index < n {
            return (i, index);
        }
        index -= n;
    }
    panic!("parameter index out of range");
}

fn read_slot(l: &Dense, slot: usize) -> f64 {
    let nw = l.weight.len();
    if slot < nw {
        let cols = l.weight.ncols();
        l.weight[[slot / cols, slot % cols]]
    } else {
        l.bias[slot - nw]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_return_bias() {
        let mut net = Mlp::zeros(&[3, 2], Activation::Relu, Activation::Linear).unwrap();
        net.layers_mut()[0].bias = array![0.5, -1.5];
        assert_eq!(net.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![0.5, -1.5]);
        assert_eq!(net.forward(&[-7.0, 0.0, 9.0]).unwrap(), vec![0.5, -1.5]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut net = Mlp::zeros(&[3, 3], Activation::Relu, Activation::Linear).unwrap();
        net.layers_mut()[0].weight = Array2::eye(3);
        assert_eq!(net.forward(&[1.0, -2.0, 3.5]).unwrap(), vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn random_net_matches_hand_matrix_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = Mlp::new(&[3, 4, 2], Activation::Relu, Activation::Linear, &mut rng).unwrap();
        let x = [0.3, -1.2, 0.7];
        let l0 = &net.layers()[0];
        let l1 = &net.layers()[1];
        let mut hidden = [0.0; 4];
        for (i, h) in hidden.iter_mut().enumerate() {
            let mut s = l0.bias[i];
            for (j, xv) in x.iter().enumerate() {
                s += l0.weight[[i, j]] * xv;
            }
            *h = s.max(0.0);
        }
        let mut expected = [0.0; 2];
        for (i, e) in expected.iter_mut().enumerate() {
            let mut s = l1.bias[i];
            for (j, h) in hidden.iter().enumerate() {
                s += l1.weight[[i, j]] * h;
            }
            *e = s;
        }
        let out = net.forward(&x).unwrap();
        for (o, e) in out.iter().zip(expected) {
            assert!((o - e).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let net = Mlp::zeros(&[3, 2], Activation::Relu, Activation::Linear).unwrap();
        assert!(net.forward(&[1.0, 2.0]).is_err());
        assert!(Mlp::zeros(&[3], Activation::Relu, Activation::Linear).is_err());
    }

    #[test]
    fn zero_adjoint_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[3, 5, 2], Activation::Relu, Activation::Tanh, &mut rng).unwrap();
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i as f64) - (j as f64) * 0.5);
        let cache = net.forward_cached(x.view()).unwrap();
        let (g, dx) = net.backward(&cache, Array2::zeros((4, 2)).view()).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        assert!(dx.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_layer_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(&[3, 2], Activation::Relu, Activation::Linear, &mut rng).unwrap();
        let x = array![[1.0, -2.0, 0.5]];
        let v = array![[0.25, -3.0]];
        let cache = net.forward_cached(x.view()).unwrap();
        let (g, _) = net.backward(&cache, v.view()).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert!((g.layers[0].weight[[i, j]] - v[[0, i]] * x[[0, j]]).abs() < 1e-15);
            }
            assert_eq!(g.layers[0].bias[i], v[[0, i]]);
        }
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Mlp::new(&[2, 3, 1], Activation::Relu, Activation::Linear, &mut rng).unwrap();
        let other = net.clone();
        let x = array![[0.1, 0.2]];
        let cache = net.forward_cached(x.view()).unwrap();
        assert!(other.backward(&cache, array![[1.0]].view()).is_err());
        assert!(net.backward(&cache, array![[1.0, 2.0]].view()).is_err());
        net.set_param(0, 0.3);
        assert!(net.backward(&cache, array![[1.0]].view()).is_err());
    }

    #[test]
    fn soft_update_extremes_and_arithmetic() {
        let mut online = Mlp::zeros(&[1, 1], Activation::Relu, Activation::Linear).unwrap();
        let mut target = online.clone();
        target.set_param(0, 1.0);
        online.set_param(0, 0.0);
        let before = target.clone();
        soft_update(&mut target, &online, 0.0).unwrap();
        assert_eq!(target, before);
        soft_update(&mut target, &online, 0.005).unwrap();
        assert!((target.param(0) - 0.995).abs() < 1e-15);
        soft_update(&mut target, &online, 1.0).unwrap();
        assert_eq!(target, online);
        assert!(soft_update(&mut target, &online, 1.5).is_err());
        let wide = Mlp::zeros(&[1, 2], Activation::Relu, Activation::Linear).unwrap();
        assert!(soft_update(&mut target, &wide, 0.5).is_err());
    }

    #[test]
    fn snapshot_is_isolated() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = Mlp::new(&[2, 3, 1], Activation::Relu, Activation::Linear, &mut rng).unwrap();
        let snap = snapshot(&net);
        let v = snap.param(4);
        net.set_param(4, v + 10.0);
        assert_eq!(snap.param(4), v);
        assert_ne!(snap, net);
    }
}
