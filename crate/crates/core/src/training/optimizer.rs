use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Param;
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// SGD with heavy-ball momentum: `v ← μ·v + g`, `w ← w − lr·v`.
    #[default]
    Sgd,
    /// Adam with bias-corrected moments.
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// L2 penalty added to the gradient of FC weight matrices.
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            optimizer: OptimizerKind::Sgd,
            learning_rate: 1e-3,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        let unit = |v: f64| (0.0..1.0).contains(&v);
        if !unit(self.momentum) || !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::Config("momentum and adam betas must be in [0, 1)".into()));
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 || self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::Config("adam_eps must be > 0 and weight_decay >= 0".into()));
        }
        Ok(())
    }
}

/// Optimizer plus its per-parameter moment buffers, allocated on the first
/// step. Parameters must be passed in the same order on every step.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    config: OptimizerConfig,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
    steps: u64,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(OptimizerState {
            config,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update to every parameter, then zeroes the gradients.
    pub fn step(&mut self, params: &mut [Param<'_>]) -> Result<()> {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Matrix::zeros(p.value.rows(), p.value.cols())).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return Err(Error::shape(
                "optimizer step (parameter count)",
                (self.first.len(), 1),
                (params.len(), 1),
            ));
        }
        for (p, buf) in params.iter().zip(&self.first) {
            if p.value.shape() != buf.shape() || p.grad.shape() != buf.shape() {
                return Err(Error::shape(p.name, p.value.shape(), buf.shape()));
            }
        }
        self.steps += 1;
        let cfg = &self.config;
        let lr = cfg.learning_rate;
        let t = self.steps as i32;
        let bias1 = 1.0 - cfg.beta1.powi(t);
        let bias2 = 1.0 - cfg.beta2.powi(t);

        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let decay = if p.decay { cfg.weight_decay } else { 0.0 };
            let w = p.value.as_mut_slice();
            let g = p.grad.as_slice();
            match cfg.optimizer {
                OptimizerKind::Sgd => {
                    for ((w, &g), m) in w.iter_mut().zip(g).zip(m.as_mut_slice()) {
                        let g = g + decay * *w;
                        *m = cfg.momentum * *m + g;
                        *w -= lr * *m;
                    }
                }
                OptimizerKind::Adam => {
                    for (((w, &g), m), v) in w
                        .iter_mut()
                        .zip(g)
                        .zip(m.as_mut_slice())
                        .zip(v.as_mut_slice())
                    {
                        let g = g + decay * *w;
                        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                        let m_hat = *m / bias1;
                        let v_hat = *v / bias2;
                        *w -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
                    }
                }
            }
            p.grad.fill(0.0);
        }
        Ok(())
    }
}
