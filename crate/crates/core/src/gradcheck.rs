//! Central finite-difference checks of every hand-written backward pass.
//!
//! Each case draws a random shape and input, defines the scalar loss
//! `L = Σ R ⊙ f(x)` for a fixed random `R`, and compares the analytic
//! gradients of `L` with respect to the input and every parameter against
//! `(L(θ+h) − L(θ−h)) / 2h`. The error of one gradient tensor is
//! `max|analytic − numeric| / max(max|analytic|, max|numeric|, 1e-6)`; the
//! floor keeps gradients that are exactly zero in theory (such as the FC_2
//! bias in front of BN_2) from turning roundoff into a large ratio.

use serde::Serialize;

use crate::error::Result;
use crate::layers::{softmax, BatchNorm, Dropout, FcLayer, InitScheme, Layer, LeakyRelu, Mode};
use crate::linalg::{Matrix, SeededRng};
use crate::losses::{cross_entropy, ce_grad_wrt_presoftmax, entropy, entropy_grad_wrt_presoftmax, OneHotLabels};
use crate::model::{BncModel, ModelConfig};

pub const STEP: f64 = 1e-5;
pub const LAYER_TOLERANCE: f64 = 1e-5;
pub const LOSS_TOLERANCE: f64 = 1e-6;
pub const MODEL_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_CASES: usize = 25;
const SCALE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComponentReport {
    pub component: &'static str,
    pub cases: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl ComponentReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Normalized max-abs difference between two gradient tensors.
pub fn relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    let diff = analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    diff / analytic.max_abs().max(numeric.max_abs()).max(SCALE_FLOOR)
}

/// Central differences of `loss` around `x`, one entry at a time.
pub fn numeric_gradient(x: &Matrix, mut loss: impl FnMut(&Matrix) -> f64) -> Matrix {
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.as_slice()[i];
        probe.as_mut_slice()[i] = orig + STEP;
        let up = loss(&probe);
        probe.as_mut_slice()[i] = orig - STEP;
        let down = loss(&probe);
        probe.as_mut_slice()[i] = orig;
        grad.as_mut_slice()[i] = (up - down) / (2.0 * STEP);
    }
    grad
}

fn weighted_sum(y: &Matrix, r: &Matrix) -> f64 {
    y.as_slice().iter().zip(r.as_slice()).map(|(a, b)| a * b).sum()
}

fn dims(rng: &mut SeededRng, lo: u64, hi: u64) -> usize {
    (lo + rng.below(hi - lo + 1)) as usize
}

/// Worst error over the input gradient and every parameter gradient of one
/// layer on input `x`.
fn check_layer<L: Layer + Clone>(layer: &L, x: &Matrix, rng: &mut SeededRng) -> Result<f64> {
    let mut analytic = layer.clone();
    let y = analytic.forward(x)?;
    let r = rng.randn(y.rows(), y.cols(), 0.0, 1.0)?;
    for p in analytic.params() {
        p.grad.fill(0.0);
    }
    let dx = analytic.backward(&r)?;

    // probes start from the post-forward state so that frozen masks carry over
    let base = analytic.clone();
    let eval = |l: &mut L, input: &Matrix| -> f64 {
        weighted_sum(&l.forward(input).expect("shape fixed"), &r)
    };
    let mut worst = relative_error(&dx, &numeric_gradient(x, |xp| eval(&mut base.clone(), xp)));

    let n_params = analytic.params().len();
    for pi in 0..n_params {
        let (value, grad) = {
            let mut ps = analytic.params();
            (ps[pi].value.clone(), ps.swap_remove(pi).grad.clone())
        };
        let numeric = numeric_gradient(&value, |vp| {
            let mut l = base.clone();
            *l.params()[pi].value = vp.clone();
            eval(&mut l, x)
        });
        worst = worst.max(relative_error(&grad, &numeric));
    }
    Ok(worst)
}

pub fn check_fc(rng: &mut SeededRng, cases: usize) -> Result<ComponentReport> {
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (n, i, o) = (dims(rng, 1, 6), dims(rng, 1, 6), dims(rng, 1, 6));
        let mut layer = FcLayer::init(i, o, InitScheme::Xavier, rng)?;
        layer.bias = rng.randn(1, o, 0.0, 1.0)?;
        let x = rng.randn(n, i, 0.0, 1.0)?;
        worst = worst.max(check_layer(&layer, &x, rng)?);
    }
    Ok(report("FC", cases, worst, LAYER_TOLERANCE))
}

pub fn check_leaky_relu(rng: &mut SeededRng, cases: usize) -> Result<ComponentReport> {
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (n, d) = (dims(rng, 1, 6), dims(rng, 1, 6));
        let leak = 0.5 * rng.uniform();
        // keep inputs away from the kink so that differences do not straddle it
        let x = rng
            .randn(n, d, 0.0, 1.0)?
            .map(|v| if v.abs() < 0.05 { v.signum() * 0.05 + v } else { v });
        worst = worst.max(check_layer(&LeakyRelu::new(leak)?, &x, rng)?);
    }
    Ok(report("LeakyReLU", cases, worst, LAYER_TOLERANCE))
}

pub fn check_batchnorm(rng: &mut SeededRng, cases: usize) -> Result<ComponentReport> {
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (n, d) = (dims(rng, 2, 8), dims(rng, 1, 6));
        let mut bn = BatchNorm::new(d, 1e-5, 0.1)?;
        bn.gamma = rng.randn(1, d, 1.0, 0.5)?;
        bn.beta = rng.randn(1, d, 0.0, 1.0)?;
        let x = rng.randn(n, d, 0.5, 2.0)?;
        worst = worst.max(check_layer(&bn, &x, rng)?);
    }
    Ok(report("BatchNorm", cases, worst, LAYER_TOLERANCE))
}

pub fn check_dropout(rng: &mut SeededRng, cases: usize) -> Result<ComponentReport> {
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (n, d) = (dims(rng, 1, 6), dims(rng, 1, 6));
        let mut drop = Dropout::new(0.6 * rng.uniform(), SeededRng::new(rng.next_u64()))?;
        drop.freeze_mask(true);
        let x = rng.randn(n, d, 0.0, 1.0)?;
        worst = worst.max(check_layer(&drop, &x, rng)?);
    }
    Ok(report("Dropout", cases, worst, LAYER_TOLERANCE))
}

/// Softmax composed with cross-entropy and with entropy, against logits.
pub fn check_losses(rng: &mut SeededRng, cases: usize) -> Result<ComponentReport> {
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (n, k) = (dims(rng, 1, 6), dims(rng, 2, 6));
        let z = rng.randn(n, k, 0.0, 1.5)?;
        let labels: Vec<u32> = (0..n).map(|_| rng.below(k as u64) as u32).collect();
        let y = OneHotLabels::from_indices(&labels, k)?;

        let analytic = ce_grad_wrt_presoftmax(&softmax(&z), &y)?;
        let numeric = numeric_gradient(&z, |zp| cross_entropy(&softmax(zp), &y).expect("shapes match"));
        worst = worst.max(relative_error(&analytic, &numeric));

        let analytic = entropy_grad_wrt_presoftmax(&softmax(&z));
        let numeric = numeric_gradient(&z, |zp| entropy(&softmax(zp)));
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(report("losses", cases, worst, LOSS_TOLERANCE))
}

/// The whole head at dims 8→6→4 on batches of 5, with dropout active under a
/// frozen mask. Cases alternate cross-entropy and entropy losses and toggle
/// BN_2.
pub fn check_model(rng: &mut SeededRng, cases: usize) -> Result<ComponentReport> {
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let config = ModelConfig {
            input_dim: 8,
            hidden_dim: 6,
            num_classes: 4,
            include_bn2: case % 4 < 2,
            dropout_p: 0.3,
            seed: rng.next_u64(),
            ..ModelConfig::default()
        };
        let mut model = BncModel::build(config)?;
        model.set_mode(Mode::Train);
        model.freeze_dropout_mask(true);
        let x = rng.randn(5, 8, 0.0, 1.0)?;
        let labels: Vec<u32> = (0..5).map(|_| rng.below(4) as u32).collect();
        let y = OneHotLabels::from_indices(&labels, 4)?;
        let use_ce = case % 2 == 0;
        let loss = |m: &mut BncModel| -> f64 {
            let p = m.forward(&x, None).expect("shape fixed");
            if use_ce {
                cross_entropy(&p, &y).expect("shape fixed")
            } else {
                entropy(&p)
            }
        };

        let probs = model.forward(&x, None)?;
        let base = model.clone();
        let dz = if use_ce {
            ce_grad_wrt_presoftmax(&probs, &y)?
        } else {
            entropy_grad_wrt_presoftmax(&probs)
        };
        model.zero_grad();
        model.backward(&dz)?;

        let n_params = model.params().len();
        for pi in 0..n_params {
            let (value, grad) = {
                let ps = model.params();
                (ps[pi].value.clone(), ps[pi].grad.clone())
            };
            let numeric = numeric_gradient(&value, |vp| {
                let mut m = base.clone();
                *m.params()[pi].value = vp.clone();
                loss(&mut m)
            });
            worst = worst.max(relative_error(&grad, &numeric));
        }
    }
    Ok(report("model", cases, worst, MODEL_TOLERANCE))
}

fn report(component: &'static str, cases: usize, max_rel_error: f64, tolerance: f64) -> ComponentReport {
    ComponentReport {
        component,
        cases,
        max_rel_error,
        tolerance,
    }
}

/// Every suite with `cases` random cases each.
pub fn run_all(seed: u64, cases: usize) -> Result<Vec<ComponentReport>> {
    let mut rng = SeededRng::new(seed);
    Ok(vec![
        check_fc(&mut rng, cases)?,
        check_leaky_relu(&mut rng, cases)?,
        check_batchnorm(&mut rng, cases)?,
        check_dropout(&mut rng, cases)?,
        check_losses(&mut rng, cases)?,
        check_model(&mut rng, cases)?,
    ])
}
