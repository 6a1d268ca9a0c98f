#![allow(dead_code)]

use bnc::analysis::{tapped_activations, ChannelPools, LayerTap};
use bnc::data::{generate_shift_pair, FeatureDataset, ShiftSpec};
use bnc::layers::EvalStats;
use bnc::training::{adapt_cotrained, adapt_target, train_source, OptimizerConfig, RunConfig};
use bnc::{BncModel, Matrix, ModelConfig, SeededRng};

/// Central-difference gradient of `f` at `x`.
pub fn fd_gradient(x: &Matrix, h: f64, mut f: impl FnMut(&Matrix) -> f64) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        for c in 0..x.cols() {
            let mut up = x.clone();
            up.set(r, c, x.get(r, c) + h);
            let mut down = x.clone();
            down.set(r, c, x.get(r, c) - h);
            out.set(r, c, (f(&up) - f(&down)) / (2.0 * h));
        }
    }
    out
}

/// Largest entrywise error relative to the larger gradient's magnitude.
pub fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let mut diff: f64 = 0.0;
    let mut scale: f64 = 1e-6;
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        diff = diff.max((x - y).abs());
        scale = scale.max(x.abs()).max(y.abs());
    }
    diff / scale
}

pub fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
    SeededRng::new(seed).randn(rows, cols, 0.0, 1.0).unwrap()
}

/// The benchmark setting: 10 classes, 32 dims, 200 rows per class.
pub const BENCH_K: usize = 10;
pub const BENCH_D: usize = 32;
pub const BENCH_N: usize = 200;
pub const BENCH_DATA_SEED: u64 = 42;
pub const BENCH_LR: f64 = 1e-2;

pub fn bench_pair(spec: &ShiftSpec) -> (FeatureDataset, FeatureDataset) {
    generate_shift_pair(BENCH_K, BENCH_D, BENCH_N, spec, BENCH_DATA_SEED).unwrap()
}

pub fn bench_config(seed: u64) -> RunConfig {
    RunConfig {
        optimizer: OptimizerConfig {
            learning_rate: BENCH_LR,
            ..OptimizerConfig::default()
        },
        model: ModelConfig {
            input_dim: BENCH_D,
            num_classes: BENCH_K,
            seed,
            ..ModelConfig::default()
        },
        ..RunConfig::default()
    }
}

#[derive(Clone, Debug)]
pub struct SeedOutcome {
    pub seed: u64,
    pub source_acc: f64,
    pub pre: f64,
    pub post: f64,
    pub cotrained: f64,
    pub entropy_pre: f64,
    pub entropy_post: f64,
    /// Pooled other-class softmax-input statistics on the target set after
    /// adaptation, with and without BN_2.
    pub bn2: ChannelPools,
    pub ablated: ChannelPools,
}

fn pools(model: &mut BncModel, ds: &FeatureDataset) -> ChannelPools {
    let act = tapped_activations(model, ds, LayerTap::SmIn, EvalStats::Running).unwrap();
    ChannelPools::from_activations(&act, ds.labels().unwrap()).unwrap()
}

/// Source training, source-free adaptation, co-trained adaptation and the
/// retrained ablated head for one seed.
pub fn run_seed(source: &FeatureDataset, target: &FeatureDataset, seed: u64) -> SeedOutcome {
    let cfg = bench_config(seed);
    let mut model = BncModel::build(cfg.model.clone()).unwrap();
    let src = train_source(&mut model, source, &cfg).unwrap();
    let mut cotrained = model.clone();
    let adapt = adapt_target(&mut model, target, &cfg).unwrap();
    let cot = adapt_cotrained(&mut cotrained, source, target, &cfg).unwrap();

    let mut abl_cfg = cfg.clone();
    abl_cfg.model.include_bn2 = false;
    let mut ablated = BncModel::build(abl_cfg.model.clone()).unwrap();
    train_source(&mut ablated, source, &abl_cfg).unwrap();
    adapt_target(&mut ablated, target, &abl_cfg).unwrap();

    SeedOutcome {
        seed,
        source_acc: src.final_source_acc.unwrap(),
        pre: adapt.initial_target_acc.unwrap(),
        post: adapt.final_target_acc.unwrap(),
        cotrained: cot.final_target_acc.unwrap(),
        entropy_pre: adapt.initial_target_entropy.unwrap(),
        entropy_post: adapt.final_target_entropy.unwrap(),
        bn2: pools(&mut model, target),
        ablated: pools(&mut ablated, target),
    }
}

pub fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Outcome counts from a mutation fuzz run.
#[derive(Clone, Copy, Debug, Default)]
pub struct FuzzTally {
    pub cases: usize,
    pub accepted: usize,
    pub typed_errors: usize,
    pub untyped_errors: usize,
    pub panics: usize,
}

impl FuzzTally {
    pub fn clean(&self) -> bool {
        self.panics == 0 && self.untyped_errors == 0
    }
}

/// A small labeled dataset encoded as BNCF.
pub fn fuzz_seed_file() -> Vec<u8> {
    let x = random(6, 3, 7);
    let ds = bnc::data::FeatureDataset::new(x, Some(vec![0, 1, 2, 0, 1, 2]), 3, "fuzz").unwrap();
    bnc::data::encode_features(&ds).unwrap()
}

/// Applies one random mutation: truncation, bit flips, byte overwrites,
/// header-field garbage, appended bytes or a fully random buffer.
pub fn mutate(base: &[u8], rng: &mut SeededRng) -> Vec<u8> {
    let mut buf = base.to_vec();
    match rng.below(6) {
        0 => buf.truncate(rng.below(buf.len() as u64) as usize),
        1 => {
            for _ in 0..1 + rng.below(4) {
                let i = rng.below(buf.len() as u64) as usize;
                buf[i] ^= 1 << rng.below(8);
            }
        }
        2 => {
            for _ in 0..1 + rng.below(8) {
                let i = rng.below(buf.len() as u64) as usize;
                buf[i] = rng.below(256) as u8;
            }
        }
        3 => {
            // Header fields: version, count, dim, k, label flag.
            let i = 4 + rng.below(21) as usize;
            buf[i] = if rng.below(2) == 0 { 0xFF } else { rng.below(256) as u8 };
        }
        4 => buf.extend((0..1 + rng.below(16)).map(|_| rng.below(256) as u8)),
        _ => {
            let len = rng.below(128) as usize;
            buf = (0..len).map(|_| rng.below(256) as u8).collect();
        }
    }
    buf
}

/// Runs `decode` on `cases` mutations of `base`, counting panics and error kinds.
pub fn fuzz<T>(
    base: &[u8],
    cases: usize,
    seed: u64,
    decode: impl Fn(&[u8]) -> bnc::Result<T> + std::panic::RefUnwindSafe,
) -> FuzzTally {
    let mut rng = SeededRng::new(seed);
    let mut tally = FuzzTally {
        cases,
        ..FuzzTally::default()
    };
    for _ in 0..cases {
        let buf = mutate(base, &mut rng);
        match std::panic::catch_unwind(|| decode(&buf).map(|_| ())) {
            Ok(Ok(())) => tally.accepted += 1,
            Ok(Err(bnc::Error::Format(_) | bnc::Error::Validation(_))) => tally.typed_errors += 1,
            Ok(Err(_)) => tally.untyped_errors += 1,
            Err(_) => tally.panics += 1,
        }
    }
    tally
}

/// Worst deviations of a train-mode BN pass from its closed-form statistics,
/// and of an eval-mode double application from the composed affine map.
#[derive(Clone, Copy, Debug)]
pub struct BnInvariantErrors {
    pub mean: f64,
    pub variance: f64,
    pub composition: f64,
}

pub fn bn_invariant_errors(rows: usize, cols: usize, seed: u64) -> BnInvariantErrors {
    use bnc::layers::{BatchNorm, Layer, Mode};

    let mut rng = SeededRng::new(seed);
    let eps = 1e-5;
    let mut bn = BatchNorm::new(cols, eps, 0.1).unwrap();
    bn.gamma = rng.randn(1, cols, 1.0, 0.5).unwrap();
    bn.beta = rng.randn(1, cols, 0.0, 2.0).unwrap();
    let spread = rng.randn(1, cols, 0.0, 3.0).unwrap().map(f64::abs);
    let shift = rng.randn(1, cols, 0.0, 5.0).unwrap();
    let mut x = rng.randn(rows, cols, 0.0, 1.0).unwrap();
    for r in 0..rows {
        for c in 0..cols {
            x.set(r, c, x.get(r, c) * (0.1 + spread.get(0, c)) + shift.get(0, c));
        }
    }

    let y = bn.forward(&x).unwrap();
    let n = rows as f64;
    let mut mean_err: f64 = 0.0;
    let mut var_err: f64 = 0.0;
    for c in 0..cols {
        let col = |m: &Matrix| (0..rows).map(|r| m.get(r, c)).collect::<Vec<_>>();
        let (xc, yc) = (col(&x), col(&y));
        let mx = xc.iter().sum::<f64>() / n;
        let sx = xc.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n;
        let my = yc.iter().sum::<f64>() / n;
        let sy = yc.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
        let g = bn.gamma.get(0, c);
        mean_err = mean_err.max((my - bn.beta.get(0, c)).abs());
        var_err = var_err.max((sy - g * g * sx / (sx + eps)).abs());
    }

    bn.set_mode(Mode::Eval);
    let probe = rng.randn(rows, cols, 0.0, 4.0).unwrap();
    let once = bn.forward(&probe).unwrap();
    let twice = bn.forward(&once).unwrap();
    let mut comp_err: f64 = 0.0;
    for c in 0..cols {
        let a = bn.gamma.get(0, c) / (bn.running_var.get(0, c) + eps).sqrt();
        let b = bn.beta.get(0, c) - a * bn.running_mean.get(0, c);
        let (a2, b2) = (a * a, a * b + b);
        for r in 0..rows {
            comp_err = comp_err.max((twice.get(r, c) - (a2 * probe.get(r, c) + b2)).abs());
        }
    }
    BnInvariantErrors {
        mean: mean_err,
        variance: var_err,
        composition: comp_err,
    }
}
