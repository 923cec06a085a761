use serde::{Deserialize, Serialize};

use super::graph::{Gradients, ParamStore};
use super::tensor::Tensor;
use super::DiffError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self { learning_rate, ..Self::default() }
    }
}

/// Adam with bias correction. Moments are allocated lazily per parameter
/// the first time it receives a gradient, zero-initialized.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step_count: u64,
    first_moment: Vec<Option<Tensor>>,
    second_moment: Vec<Option<Tensor>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step_count: 0, first_moment: Vec::new(), second_moment: Vec::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update to every parameter that has a gradient.
    ///
    /// Fails without touching any parameter if a gradient targets a frozen
    /// parameter or has the wrong shape.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<(), DiffError> {
        for (id, g) in grads.iter() {
            if id.index() >= params.len() {
                return Err(DiffError::UnknownParameter { index: id.index() });
            }
            if params.is_frozen(id) {
                return Err(DiffError::FrozenParameter { name: params.name(id).to_string() });
            }
            let p = params.get(id);
            if p.shape() != g.shape() {
                return Err(DiffError::ShapeMismatch {
                    context: format!("adam update of {}", params.name(id)),
                    expected: p.shape(),
                    found: g.shape(),
                });
            }
        }
        if self.first_moment.len() < params.len() {
            self.first_moment.resize(params.len(), None);
            self.second_moment.resize(params.len(), None);
        }
        self.step_count += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (id, g) in grads.iter() {
            let (rows, cols) = g.shape();
            let m = self.first_moment[id.index()].get_or_insert_with(|| Tensor::zeros(rows, cols));
            let v = self.second_moment[id.index()].get_or_insert_with(|| Tensor::zeros(rows, cols));
            let p = params.get_mut(id);
            for (((pi, mi), vi), gi) in p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
