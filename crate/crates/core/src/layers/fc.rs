use serde::{Deserialize, Serialize};

use super::{Layer, Param};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, SeededRng};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    /// Normal with std `sqrt(2 / fan_in)`.
    #[default]
    He,
    /// Normal with std `sqrt(2 / (fan_in + fan_out))`.
    Xavier,
}

impl InitScheme {
    pub fn std(self, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            InitScheme::He => (2.0 / fan_in as f64).sqrt(),
            InitScheme::Xavier => (2.0 / (fan_in + fan_out) as f64).sqrt(),
        }
    }
}

/// Fully connected layer `y = x·W + b` with `W` stored `in×out`.
#[derive(Clone, Debug)]
pub struct FcLayer {
    pub weight: Matrix,
    pub bias: Matrix,
    pub grad_weight: Matrix,
    pub grad_bias: Matrix,
    cache_input: Option<Matrix>,
}

impl FcLayer {
    pub fn new(weight: Matrix, bias: Matrix) -> Result<Self> {
        if bias.rows() != 1 || bias.cols() != weight.cols() {
            return Err(Error::shape("fc bias", weight.shape(), bias.shape()));
        }
        Ok(FcLayer {
            grad_weight: Matrix::zeros(weight.rows(), weight.cols()),
            grad_bias: Matrix::zeros(1, bias.cols()),
            weight,
            bias,
            cache_input: None,
        })
    }

    /// Random weights per `init`, zero bias.
    pub fn init(inputs: usize, outputs: usize, init: InitScheme, rng: &mut SeededRng) -> Result<Self> {
        let weight = rng.randn(inputs, outputs, 0.0, init.std(inputs, outputs))?;
        Self::new(weight, Matrix::zeros(1, outputs))
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.fill(0.0);
        self.grad_bias.fill(0.0);
    }
}

impl Layer for FcLayer {
    fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.weight.rows() {
            return Err(Error::shape("fc_forward", x.shape(), self.weight.shape()));
        }
        let y = x.matmul(&self.weight)?.add_row(&self.bias)?;
        self.cache_input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, dy: &Matrix) -> Result<Matrix> {
        let x = self
            .cache_input
            .as_ref()
            .ok_or_else(|| Error::State("fc backward called before forward".into()))?;
        if dy.shape() != (x.rows(), self.weight.cols()) {
            return Err(Error::shape(
                "fc_backward",
                dy.shape(),
                (x.rows(), self.weight.cols()),
            ));
        }
        self.grad_weight.add_assign(&x.transpose().matmul(dy)?)?;
        self.grad_bias.add_assign(&dy.col_sums())?;
        dy.matmul(&self.weight.transpose())
    }

    fn params(&mut self) -> Vec<Param<'_>> {
        vec![
            Param {
                name: "weight",
                value: &mut self.weight,
                grad: &mut self.grad_weight,
                decay: true,
            },
            Param {
                name: "bias",
                value: &mut self.bias,
                grad: &mut self.grad_bias,
                decay: false,
            },
        ]
    }
}
