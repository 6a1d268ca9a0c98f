use super::{EvalStats, Layer, Mode, Param};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Debug)]
struct BnCache {
    x_hat: Matrix,
    inv_std: Vec<f64>,
}

/// Per-channel batch normalization over the rows of a `N×C` batch.
///
/// Train mode normalizes with the biased batch statistics and folds them into
/// the running estimates as `running ← (1−momentum)·running + momentum·batch`.
/// Eval mode is a fixed affine map built from the running estimates, unless
/// `eval_stats` is [`EvalStats::Batch`], in which case batch statistics are
/// used without touching the running estimates. Only train mode caches what
/// backward needs.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: Matrix,
    pub beta: Matrix,
    pub grad_gamma: Matrix,
    pub grad_beta: Matrix,
    pub running_mean: Matrix,
    pub running_var: Matrix,
    momentum: f64,
    eps: f64,
    mode: Mode,
    eval_stats: EvalStats,
    cache: Option<BnCache>,
}

impl BatchNorm {
    pub fn new(channels: usize, eps: f64, momentum: f64) -> Result<Self> {
        if !eps.is_finite() || eps <= 0.0 {
            return Err(Error::Config(format!("batch norm eps must be > 0, got {eps}")));
        }
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(Error::Config(format!(
                "batch norm momentum must be in (0, 1), got {momentum}"
            )));
        }
        Ok(BatchNorm {
            gamma: Matrix::filled(1, channels, 1.0),
            beta: Matrix::zeros(1, channels),
            grad_gamma: Matrix::zeros(1, channels),
            grad_beta: Matrix::zeros(1, channels),
            running_mean: Matrix::zeros(1, channels),
            running_var: Matrix::filled(1, channels, 1.0),
            momentum,
            eps,
            mode: Mode::Train,
            eval_stats: EvalStats::Running,
            cache: None,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.cols()
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_eval_stats(&mut self, stats: EvalStats) {
        self.eval_stats = stats;
    }

    pub fn zero_grad(&mut self) {
        self.grad_gamma.fill(0.0);
        self.grad_beta.fill(0.0);
    }

    fn normalize(&self, x: &Matrix, mean: &[f64], inv_std: &[f64]) -> (Matrix, Matrix) {
        let mut x_hat = x.clone();
        let mut y = x.clone();
        let (g, b) = (self.gamma.as_slice(), self.beta.as_slice());
        for r in 0..x.rows() {
            let xr = x_hat.row_mut(r);
            for c in 0..xr.len() {
                xr[c] = (xr[c] - mean[c]) * inv_std[c];
            }
            let xr = x_hat.row(r).to_vec();
            for (c, v) in y.row_mut(r).iter_mut().enumerate() {
                *v = g[c] * xr[c] + b[c];
            }
        }
        (x_hat, y)
    }
}

impl Layer for BatchNorm {
    fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.channels() {
            return Err(Error::shape("batchnorm_forward", x.shape(), self.gamma.shape()));
        }
        let use_batch = self.mode == Mode::Train || self.eval_stats == EvalStats::Batch;
        if use_batch && x.rows() < 2 {
            return Err(Error::DegenerateBatch(x.rows()));
        }
        let (mean, var) = if use_batch {
            x.col_stats()?
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        let inv_std: Vec<f64> = var
            .as_slice()
            .iter()
            .map(|v| 1.0 / (v + self.eps).sqrt())
            .collect();
        let (x_hat, y) = self.normalize(x, mean.as_slice(), &inv_std);

        if self.mode == Mode::Train {
            let m = self.momentum;
            for (r, b) in self
                .running_mean
                .as_mut_slice()
                .iter_mut()
                .zip(mean.as_slice())
            {
                *r = (1.0 - m) * *r + m * b;
            }
            for (r, b) in self
                .running_var
                .as_mut_slice()
                .iter_mut()
                .zip(var.as_slice())
            {
                *r = (1.0 - m) * *r + m * b;
            }
            self.cache = Some(BnCache { x_hat, inv_std });
        } else {
            self.cache = None;
        }
        Ok(y)
    }

    fn backward(&mut self, dy: &Matrix) -> Result<Matrix> {
        if self.mode != Mode::Train {
            return Err(Error::State("batch norm backward in eval mode".into()));
        }
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("batch norm backward called before forward".into()))?;
        if dy.shape() != cache.x_hat.shape() {
            return Err(Error::shape("batchnorm_backward", dy.shape(), cache.x_hat.shape()));
        }
        let n = dy.rows() as f64;
        let channels = dy.cols();
        let gamma = self.gamma.as_slice();

        // dx = γ/(N·σ) · (N·dy − Σdy − x̂·Σ(dy·x̂))
        let mut sum_dy = vec![0.0; channels];
        let mut sum_dy_xhat = vec![0.0; channels];
        for r in 0..dy.rows() {
            for c in 0..channels {
                let g = dy.get(r, c);
                sum_dy[c] += g;
                sum_dy_xhat[c] += g * cache.x_hat.get(r, c);
            }
        }
        let mut dx = Matrix::zeros(dy.rows(), channels);
        for r in 0..dy.rows() {
            for c in 0..channels {
                let v = gamma[c] * cache.inv_std[c] / n
                    * (n * dy.get(r, c) - sum_dy[c] - cache.x_hat.get(r, c) * sum_dy_xhat[c]);
                dx.set(r, c, v);
            }
        }
        for c in 0..channels {
            self.grad_gamma.as_mut_slice()[c] += sum_dy_xhat[c];
            self.grad_beta.as_mut_slice()[c] += sum_dy[c];
        }
        Ok(dx)
    }

    fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        if mode == Mode::Eval {
            self.cache = None;
        }
    }

    fn params(&mut self) -> Vec<Param<'_>> {
        vec![
            Param {
                name: "gamma",
                value: &mut self.gamma,
                grad: &mut self.grad_gamma,
                decay: false,
            },
            Param {
                name: "beta",
                value: &mut self.beta,
                grad: &mut self.grad_beta,
                decay: false,
            },
        ]
    }
}
