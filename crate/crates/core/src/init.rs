//! Parameter initialisation helpers.

use rand::Rng;

use crate::autograd::ParamStore;
use crate::ops_softplus_inverse;
use crate::tensor::Tensor;

pub(crate) struct Init<'a, R: Rng> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut R,
}

impl<R: Rng> Init<'_, R> {
    pub fn uniform(&mut self, name: String, shape: &[usize], bound: f64) {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.store.insert(name, Tensor::new(shape, data));
    }

    pub fn constant(&mut self, name: String, shape: &[usize], value: f64) {
        self.store.insert(name, Tensor::full(shape, value));
    }

    pub fn tensor(&mut self, name: String, value: Tensor) {
        self.store.insert(name, value);
    }

    /// `{prefix}.weight` `[fan_in, fan_out]` and `{prefix}.bias`, both
    /// uniform in `±1/√fan_in`.
    pub fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        self.uniform(format!("{prefix}.weight"), &[fan_in, fan_out], bound);
        self.uniform(format!("{prefix}.bias"), &[fan_out], bound);
    }

    /// As [`Init::linear`] with the weight bound multiplied by `gain` and a
    /// zero bias.
    pub fn linear_gain(&mut self, prefix: &str, fan_in: usize, fan_out: usize, gain: f64) {
        let bound = gain / (fan_in as f64).sqrt();
        self.uniform(format!("{prefix}.weight"), &[fan_in, fan_out], bound);
        self.constant(format!("{prefix}.bias"), &[fan_out], 0.0);
    }

    pub fn linear_no_bias(&mut self, prefix: &str, fan_in: usize, fan_out: usize) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        self.uniform(format!("{prefix}.weight"), &[fan_in, fan_out], bound);
    }

    pub fn conv3x3(&mut self, prefix: &str, cin: usize, cout: usize) {
        self.linear(prefix, 9 * cin, cout);
    }

    pub fn layer_norm(&mut self, prefix: &str, width: usize) {
        self.constant(format!("{prefix}.gamma"), &[width], 1.0);
        self.constant(format!("{prefix}.beta"), &[width], 0.0);
    }

    /// Softplus pre-activation bias giving step sizes log-uniform in
    /// `[1e-3, 1e-1]`.
    pub fn delta_bias(&mut self, name: String, width: usize) {
        let data = (0..width)
            .map(|_| {
                let dt = self.rng.random_range((1e-3f64).ln()..(1e-1f64).ln()).exp();
                ops_softplus_inverse(dt)
            })
            .collect();
        self.store.insert(name, Tensor::new(&[width], data));
    }
}
