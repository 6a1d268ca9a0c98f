//! The layers of the classifier head, each with a hand-derived backward pass.

mod activation;
mod batchnorm;
mod dropout;
mod fc;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::Matrix;

pub use activation::{softmax, LeakyRelu};
pub use batchnorm::BatchNorm;
pub use dropout::Dropout;
pub use fc::{FcLayer, InitScheme};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Which normalization statistics batch norm uses outside of training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EvalStats {
    #[default]
    Running,
    Batch,
}

/// A trainable parameter paired with its gradient accumulator.
pub struct Param<'a> {
    pub name: &'static str,
    pub value: &'a mut Matrix,
    pub grad: &'a mut Matrix,
    /// Whether weight decay applies (FC weight matrices only).
    pub decay: bool,
}

pub trait Layer {
    fn forward(&mut self, x: &Matrix) -> Result<Matrix>;

    /// Propagates `dy` to the input, accumulating parameter gradients.
    fn backward(&mut self, dy: &Matrix) -> Result<Matrix>;

    fn set_mode(&mut self, _mode: Mode) {}

    fn params(&mut self) -> Vec<Param<'_>> {
        Vec::new()
    }
}
