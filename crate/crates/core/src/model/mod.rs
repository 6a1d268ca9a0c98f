//! The refinement head:
//!
//! | layer | output |
//! |-------|--------|
//! | FC_1 (D→hidden) | N×hidden |
//! | LeakyReLU | N×hidden |
//! | BN_1 | N×hidden |
//! | Dropout | N×hidden |
//! | FC_2 (hidden→k) | N×k |
//! | BN_2 (optional) | N×k |
//! | Softmax | N×k |
//!
//! `include_bn2 = false` drops only BN_2, giving the ablated head.

mod checkpoint;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    softmax, BatchNorm, Dropout, EvalStats, FcLayer, InitScheme, Layer, LeakyRelu, Mode, Param,
};
use crate::linalg::{Matrix, SeededRng};

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

const STREAM_INIT: u64 = 1;
const STREAM_DROPOUT: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub leak: f64,
    pub dropout_p: f64,
    pub include_bn2: bool,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub init_scheme: InitScheme,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 2048,
            hidden_dim: 512,
            num_classes: 65,
            leak: 0.2,
            dropout_p: 0.5,
            include_bn2: true,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            init_scheme: InitScheme::He,
            seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.num_classes == 0 {
            return Err(Error::Config(format!(
                "layer sizes must be >= 1 (input_dim={}, hidden_dim={}, num_classes={})",
                self.input_dim, self.hidden_dim, self.num_classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p must be in [0, 1), got {}",
                self.dropout_p
            )));
        }
        if !(0.0..1.0).contains(&self.leak) {
            return Err(Error::Config(format!("leak must be in [0, 1), got {}", self.leak)));
        }
        if !(self.bn_eps > 0.0 && self.bn_eps.is_finite()) {
            return Err(Error::Config(format!("bn_eps must be > 0, got {}", self.bn_eps)));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return Err(Error::Config(format!(
                "bn_momentum must be in (0, 1), got {}",
                self.bn_momentum
            )));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        let (d, h, k) = (self.input_dim, self.hidden_dim, self.num_classes);
        let bn2 = if self.include_bn2 { 2 * k } else { 0 };
        d * h + h + 2 * h + h * k + k + bn2
    }
}

/// Copies of intermediate activations captured during a forward pass.
#[derive(Clone, Debug, Default)]
pub struct ActivationTaps {
    /// FC_2 output.
    pub fc2_out: Option<Matrix>,
    /// Softmax input: BN_2 output, or FC_2 output when BN_2 is ablated.
    pub sm_in: Option<Matrix>,
    /// `(layer name, output shape)` for every stage, in order.
    pub trace: Vec<(&'static str, (usize, usize))>,
}

#[derive(Clone, Debug)]
pub struct BncModel {
    config: ModelConfig,
    pub fc1: FcLayer,
    pub act1: LeakyRelu,
    pub bn1: BatchNorm,
    pub drop1: Dropout,
    pub fc2: FcLayer,
    pub bn2: Option<BatchNorm>,
    mode: Mode,
    /// Set by a train-mode forward, cleared by eval forwards and backward.
    ready_for_backward: bool,
}

impl BncModel {
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::derived(config.seed, STREAM_INIT);
        let fc1 = FcLayer::init(config.input_dim, config.hidden_dim, config.init_scheme, &mut rng)?;
        let fc2 = FcLayer::init(config.hidden_dim, config.num_classes, config.init_scheme, &mut rng)?;
        Self::assemble(config, fc1, fc2)
    }

    fn assemble(config: ModelConfig, fc1: FcLayer, fc2: FcLayer) -> Result<Self> {
        let bn2 = if config.include_bn2 {
            Some(BatchNorm::new(config.num_classes, config.bn_eps, config.bn_momentum)?)
        } else {
            None
        };
        let mut model = BncModel {
            act1: LeakyRelu::new(config.leak)?,
            bn1: BatchNorm::new(config.hidden_dim, config.bn_eps, config.bn_momentum)?,
            drop1: Dropout::new(
                config.dropout_p,
                SeededRng::derived(config.seed, STREAM_DROPOUT),
            )?,
            fc1,
            fc2,
            bn2,
            mode: Mode::Train,
            ready_for_backward: false,
            config,
        };
        model.set_mode(Mode::Train);
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn parameter_count(&self) -> usize {
        self.config.parameter_count()
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        self.bn1.set_mode(mode);
        self.drop1.set_mode(mode);
        if let Some(bn2) = &mut self.bn2 {
            bn2.set_mode(mode);
        }
        if mode == Mode::Eval {
            self.ready_for_backward = false;
        }
    }

    /// Statistics batch norm uses in eval mode.
    pub fn set_eval_stats(&mut self, stats: EvalStats) {
        self.bn1.set_eval_stats(stats);
        if let Some(bn2) = &mut self.bn2 {
            bn2.set_eval_stats(stats);
        }
    }

    pub fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.config.input_dim {
            return Err(Error::shape(
                "model input",
                x.shape(),
                (x.rows(), self.config.input_dim),
            ));
        }
        Ok(())
    }

    /// Runs the head up to the softmax input.
    pub fn logits(&mut self, x: &Matrix, mut taps: Option<&mut ActivationTaps>) -> Result<Matrix> {
        self.check_input(x)?;
        self.ready_for_backward = false;
        let mut record = |name: &'static str, m: &Matrix| {
            if let Some(t) = taps.as_deref_mut() {
                t.trace.push((name, m.shape()));
            }
        };
        record("FL", x);
        let h = self.fc1.forward(x)?;
        record("FC_1", &h);
        let h = self.act1.forward(&h)?;
        record("LR_1", &h);
        let h = self.bn1.forward(&h)?;
        record("BN_1", &h);
        let h = self.drop1.forward(&h)?;
        record("DO_1", &h);
        let fc2_out = self.fc2.forward(&h)?;
        record("FC_2", &fc2_out);
        let sm_in = match &mut self.bn2 {
            Some(bn2) => {
                let z = bn2.forward(&fc2_out)?;
                record("BN_2", &z);
                z
            }
            None => fc2_out.clone(),
        };
        if let Some(t) = taps {
            t.fc2_out = Some(fc2_out);
            t.sm_in = Some(sm_in.clone());
        }
        self.ready_for_backward = self.mode == Mode::Train;
        Ok(sm_in)
    }

    /// Class probabilities for a batch of feature rows.
    pub fn forward(&mut self, x: &Matrix, mut taps: Option<&mut ActivationTaps>) -> Result<Matrix> {
        let z = self.logits(x, taps.as_deref_mut())?;
        let probs = softmax(&z);
        if let Some(t) = taps {
            t.trace.push(("SM", probs.shape()));
        }
        Ok(probs)
    }

    /// Backpropagates the softmax-input gradient `dz`, accumulating parameter
    /// gradients. The gradient with respect to the (frozen) input features is
    /// discarded.
    pub fn backward(&mut self, dz: &Matrix) -> Result<()> {
        if self.mode != Mode::Train || !self.ready_for_backward {
            return Err(Error::State(
                "model backward requires a preceding train-mode forward".into(),
            ));
        }
        let g = match &mut self.bn2 {
            Some(bn2) => bn2.backward(dz)?,
            None => dz.clone(),
        };
        let g = self.fc2.backward(&g)?;
        let g = self.drop1.backward(&g)?;
        let g = self.bn1.backward(&g)?;
        let g = self.act1.backward(&g)?;
        self.fc1.backward(&g)?;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.fc1.zero_grad();
        self.bn1.zero_grad();
        self.fc2.zero_grad();
        if let Some(bn2) = &mut self.bn2 {
            bn2.zero_grad();
        }
    }

    /// All trainable parameters in fixed layer order.
    pub fn params(&mut self) -> Vec<Param<'_>> {
        let mut out = self.fc1.params();
        out.extend(self.bn1.params());
        out.extend(self.fc2.params());
        if let Some(bn2) = &mut self.bn2 {
            out.extend(bn2.params());
        }
        out
    }

    /// Frozen-mask switch on the dropout layer, for finite-difference checks.
    pub fn freeze_dropout_mask(&mut self, frozen: bool) {
        self.drop1.freeze_mask(frozen);
    }

    /// Eval-mode class predictions in batches of `batch_size` rows.
    pub fn predict(&mut self, x: &Matrix, batch_size: usize) -> Result<Vec<usize>> {
        let logits = self.eval_logits(x, batch_size)?;
        Ok(logits.argmax_rows())
    }

    /// Eval-mode softmax inputs for every row of `x`, restoring the previous
    /// mode afterwards. With batch eval statistics a trailing single row is
    /// merged into the preceding chunk.
    pub fn eval_logits(&mut self, x: &Matrix, batch_size: usize) -> Result<Matrix> {
        Ok(self.eval_taps(x, batch_size)?.1)
    }

    /// Eval-mode `(FC_2 output, softmax input)` for every row of `x`.
    pub fn eval_taps(&mut self, x: &Matrix, batch_size: usize) -> Result<(Matrix, Matrix)> {
        self.check_input(x)?;
        let prev = self.mode;
        self.set_mode(Mode::Eval);
        let result = (|| {
            let mut fc2 = Matrix::zeros(0, self.config.num_classes);
            let mut sm = Matrix::zeros(0, self.config.num_classes);
            for range in eval_chunks(x.rows(), batch_size) {
                let idx: Vec<usize> = range.collect();
                let mut taps = ActivationTaps::default();
                self.logits(&x.select_rows(&idx), Some(&mut taps))?;
                fc2 = fc2.vstack(&taps.fc2_out.expect("tapped"))?;
                sm = sm.vstack(&taps.sm_in.expect("tapped"))?;
            }
            Ok((fc2, sm))
        })();
        self.set_mode(prev);
        result
    }
}

/// Contiguous row ranges of at most `batch_size` rows, except that a trailing
/// single row is folded into the previous range.
fn eval_chunks(n: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    let bs = batch_size.max(2);
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = (start + bs).min(n);
        if n - end == 1 {
            end = n;
        }
        out.push(start..end);
        start = end;
    }
    out
}
