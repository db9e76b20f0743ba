use super::nn::ParamStore;

/// Adam with bias correction.
#[derive(Debug, Clone, Copy)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Updates every trainable parameter from its accumulated gradient and
    /// clears the gradients.
    pub fn step(&self, store: &mut ParamStore) {
        store.adam_update(self.lr, self.beta1, self.beta2, self.eps);
    }
}
