use super::matrix::Matrix;
use super::params::{Gradients, ParameterSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<Matrix>,
    pub second_moment: Vec<Matrix>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &ParameterSet, config: &AdamConfig) -> Self {
        let zeros: Vec<Matrix> = params
            .values()
            .map(|m| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
        }
    }

    /// One update: `θ ← θ − lr · m̂ / (sqrt(v̂) + ε)`.
    pub fn step(
        &mut self,
        params: &mut ParameterSet,
        grads: &Gradients,
        learning_rate: f64,
    ) -> Result<()> {
        if !params.same_layout(grads) || self.first_moment.len() != params.len() {
            return Err(Error::shape("gradients do not match parameter layout"));
        }
        for (m, p) in self.first_moment.iter().zip(params.values()) {
            if m.shape() != p.shape() {
                return Err(Error::shape("optimizer state does not match parameter layout"));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let step = learning_rate / (1.0 - b1.powi(t));
        let inv_c2 = 1.0 / (1.0 - b2.powi(t));
        let eps = self.epsilon;
        for (((p, g), m), v) in params
            .values_mut()
            .zip(grads.values())
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                *pv -= step * *mv / ((*vv * inv_c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
