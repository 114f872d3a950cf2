use serde::{Deserialize, Serialize};

use super::{ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Adagrad,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Coefficient of the `lambda * ||w||^2` penalty, folded into the
    /// gradient as `2 * lambda * w`.
    pub l2_lambda: f64,
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            l2_lambda: 0.0,
        }
    }

    pub fn adagrad(learning_rate: f64, l2_lambda: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adagrad,
            learning_rate,
            beta1: 0.0,
            beta2: 0.0,
            epsilon: 1e-8,
            l2_lambda,
        }
    }
}

/// Per-parameter optimizer moments. For AdaGrad only `second` is used, as
/// the running sum of squared gradients.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step_count: u64,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, params: &ParamSet) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect::<Vec<_>>()
        };
        OptimizerState {
            config,
            first: zeros(),
            second: zeros(),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn step(&mut self, params: &mut ParamSet) {
        match self.config.kind {
            OptimizerKind::Adam => self.adam_step(params),
            OptimizerKind::Adagrad => self.adagrad_step(params),
        }
    }

    /// Bias-corrected Adam update.
    pub fn adam_step(&mut self, params: &mut ParamSet) {
        self.step_count += 1;
        let c = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            if !p.trainable {
                continue;
            }
            let w = p.value.data_mut();
            let g = p.grad.data();
            let (m, v) = (m.data_mut(), v.data_mut());
            for i in 0..w.len() {
                let gi = g[i] + 2.0 * c.l2_lambda * w[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                w[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
            }
        }
    }

    /// AdaGrad: `w <- w - lr * g / (sqrt(sum g^2) + eps)`.
    pub fn adagrad_step(&mut self, params: &mut ParamSet) {
        self.step_count += 1;
        let c = self.config;
        for (p, acc) in params.iter_mut().zip(&mut self.second) {
            if !p.trainable {
                continue;
            }
            let w = p.value.data_mut();
            let g = p.grad.data();
            let acc = acc.data_mut();
            for i in 0..w.len() {
                let gi = g[i] + 2.0 * c.l2_lambda * w[i];
                acc[i] += gi * gi;
                w[i] -= c.learning_rate * gi / (acc[i].sqrt() + c.epsilon);
            }
        }
    }
}
