use crate::error::{contract, Error, Result};

use super::mlp::{Gradients, Mlp};

/// Adam moments for one network.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub first_moment: Gradients,
    pub second_moment: Gradients,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(net: &Mlp, learning_rate: f64) -> Self {
        Self {
            first_moment: Gradients::zeros_like(net),
            second_moment: Gradients::zeros_like(net),
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// One bias-corrected Adam update of `net` along `grads` (gradients of a loss to minimise).
    ///
    /// A non-finite gradient leaves both the network and the moments untouched.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != self.first_moment.layers.len()
            || grads
                .layers
                .iter()
                .zip(&self.first_moment.layers)
                .any(|(g, m)| g.weight.dim() != m.weight.dim() || g.bias.len() != m.bias.len())
            || !net.same_topology_as(grads)
        {
            return contract("gradient shape differs from optimizer state");
        }
        if !grads.is_finite() {
            return Err(Error::Numeric("non-finite gradient rejected by Adam".into()));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let (lr, eps) = (self.learning_rate, self.epsilon);
        let mut delta = grads.clone();
        for (((d, g), m), v) in delta
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.first_moment.layers)
            .zip(&mut self.second_moment.layers)
        {
            update_block(
                d.weight.as_slice_mut().unwrap(),
                g.weight.as_slice().unwrap(),
                m.weight.as_slice_mut().unwrap(),
                v.weight.as_slice_mut().unwrap(),
                [b1, b2, c1, c2, lr, eps],
            );
            update_block(
                d.bias.as_slice_mut().unwrap(),
                g.bias.as_slice().unwrap(),
                m.bias.as_slice_mut().unwrap(),
                v.bias.as_slice_mut().unwrap(),
                [b1, b2, c1, c2, lr, eps],
            );
        }
        net.apply_delta(&delta);
        Ok(())
    }
}

fn update_block(delta: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], k: [f64; 6]) {
    let [b1, b2, c1, c2, lr, eps] = k;
    for i in 0..g.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        delta[i] = lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adam for a single scalar parameter (the entropy temperature).
#[derive(Clone, Debug)]
pub struct ScalarAdam {
    m: f64,
    v: f64,
    step_count: u64,
    pub learning_rate: f64,
}

impl ScalarAdam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            m: 0.0,
            v: 0.0,
            step_count: 0,
            learning_rate,
        }
    }

    pub fn step(&mut self, param: &mut f64, grad: f64) -> Result<()> {
        if !grad.is_finite() {
            return Err(Error::Numeric("non-finite scalar gradient".into()));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        self.m = 0.9 * self.m + 0.1 * grad;
        self.v = 0.999 * self.v + 0.001 * grad * grad;
        let m_hat = self.m / (1.0 - 0.9f64.powi(t));
        let v_hat = self.v / (1.0 - 0.999f64.powi(t));
        *param -= self.learning_rate * m_hat / (v_hat.sqrt() + 1e-8);
        Ok(())
    }
}
