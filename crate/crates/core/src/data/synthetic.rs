//! Gaussian-cluster source/target pairs with a controllable domain shift.
//!
//! The source domain has `k` unit-covariance clusters whose means are drawn
//! from `N(0, 4·I)`. A target sample of class `c` is
//!
//! ```text
//! x = scale · R(μ_c + noise_multiplier · ε) + t
//! ```
//!
//! where `R` rotates each of `D/2` randomly chosen coordinate planes by
//! `rotation_angle` and `t ~ N(0, translation_sigma²·I)` is one offset shared
//! by the whole domain. Rotation, then scale, then translation.

use serde::{Deserialize, Serialize};

use super::FeatureDataset;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, SeededRng};

const STREAM_MEANS: u64 = 10;
const STREAM_SOURCE: u64 = 11;
const STREAM_TARGET: u64 = 12;
const STREAM_SHIFT: u64 = 13;

const MEAN_SIGMA: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    /// Radians, applied in each random coordinate plane.
    pub rotation_angle: f64,
    pub scale: f64,
    pub translation_sigma: f64,
    pub noise_sigma_multiplier: f64,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self::moderate()
    }
}

impl ShiftSpec {
    /// No shift: the target is a fresh draw from the source distribution.
    pub const fn identity() -> Self {
        ShiftSpec {
            rotation_angle: 0.0,
            scale: 1.0,
            translation_sigma: 0.0,
            noise_sigma_multiplier: 1.0,
        }
    }

    /// The reference shift used by the synthetic benchmark.
    pub const fn moderate() -> Self {
        ShiftSpec {
            rotation_angle: 0.5,
            scale: 2.0,
            translation_sigma: 5.0,
            noise_sigma_multiplier: 2.0,
        }
    }

    /// Linear interpolation from [`identity`](Self::identity) (severity 0)
    /// to `self` (severity 1); larger severities extrapolate.
    pub fn at_severity(&self, severity: f64) -> Self {
        let id = Self::identity();
        let lerp = |a: f64, b: f64| a + (b - a) * severity;
        ShiftSpec {
            rotation_angle: lerp(id.rotation_angle, self.rotation_angle),
            scale: lerp(id.scale, self.scale),
            translation_sigma: lerp(id.translation_sigma, self.translation_sigma),
            noise_sigma_multiplier: lerp(id.noise_sigma_multiplier, self.noise_sigma_multiplier),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.rotation_angle,
            self.scale,
            self.translation_sigma,
            self.noise_sigma_multiplier,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite || self.scale <= 0.0 || self.translation_sigma < 0.0 || self.noise_sigma_multiplier < 0.0 {
            return Err(Error::Config(format!("invalid shift spec {self:?}")));
        }
        Ok(())
    }
}

fn sample_domain(
    means: &Matrix,
    n_per_class: usize,
    noise_sigma: f64,
    rng: &mut SeededRng,
) -> Result<(Matrix, Vec<u32>)> {
    let (k, dim) = means.shape();
    let noise = rng.randn(k * n_per_class, dim, 0.0, noise_sigma)?;
    let mut x = noise;
    let mut labels = Vec::with_capacity(k * n_per_class);
    for c in 0..k {
        for i in 0..n_per_class {
            let row = x.row_mut(c * n_per_class + i);
            for (v, &m) in row.iter_mut().zip(means.row(c)) {
                *v += m;
            }
            labels.push(c as u32);
        }
    }
    Ok((x, labels))
}

/// Generates a labeled `(source, target)` pair. Target labels exist only for
/// measuring accuracy.
pub fn generate_shift_pair(
    k: usize,
    dim: usize,
    n_per_class: usize,
    spec: &ShiftSpec,
    seed: u64,
) -> Result<(FeatureDataset, FeatureDataset)> {
    if k < 2 || dim < 2 || n_per_class == 0 {
        return Err(Error::Config(format!(
            "synthetic data needs k >= 2, D >= 2, n_per_class >= 1 (got k={k}, D={dim}, n={n_per_class})"
        )));
    }
    spec.validate()?;
    let means = SeededRng::derived(seed, STREAM_MEANS).randn(k, dim, 0.0, MEAN_SIGMA)?;

    let (xs, ys) = sample_domain(&means, n_per_class, 1.0, &mut SeededRng::derived(seed, STREAM_SOURCE))?;
    let (mut xt, yt) = sample_domain(
        &means,
        n_per_class,
        spec.noise_sigma_multiplier,
        &mut SeededRng::derived(seed, STREAM_TARGET),
    )?;

    let mut shift_rng = SeededRng::derived(seed, STREAM_SHIFT);
    let axes = shift_rng.permutation(dim);
    let offset = shift_rng.randn(1, dim, 0.0, 1.0)?.scale(spec.translation_sigma);
    let (sin, cos) = spec.rotation_angle.sin_cos();
    for r in 0..xt.rows() {
        let row = xt.row_mut(r);
        for pair in axes.chunks_exact(2) {
            let (a, b) = (row[pair[0]], row[pair[1]]);
            row[pair[0]] = cos * a - sin * b;
            row[pair[1]] = sin * a + cos * b;
        }
        for (v, &t) in row.iter_mut().zip(offset.as_slice()) {
            *v = spec.scale * *v + t;
        }
    }

    let source = FeatureDataset::new(xs, Some(ys), k, "source")?;
    let target = FeatureDataset::new(xt, Some(yt), k, "target")?;
    Ok((source, target))
}

/// Accuracy on `eval` of the classifier that assigns each row to the nearest
/// class mean of `train`. Both datasets must be labeled.
pub fn nearest_centroid_accuracy(train: &FeatureDataset, eval: &FeatureDataset) -> Result<f64> {
    let train_labels = train.require_labels()?;
    let eval_labels = eval.require_labels()?;
    if train.dim() != eval.dim() {
        return Err(Error::shape(
            "nearest_centroid",
            train.features().shape(),
            eval.features().shape(),
        ));
    }
    let k = train.num_classes();
    let mut centroids = Matrix::zeros(k, train.dim());
    let mut counts = vec![0usize; k];
    for (row, &l) in train.features().iter_rows().zip(train_labels) {
        counts[l as usize] += 1;
        for (c, &v) in centroids.row_mut(l as usize).iter_mut().zip(row) {
            *c += v;
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 {
            for v in centroids.row_mut(c) {
                *v /= n as f64;
            }
        }
    }
    let mut correct = 0usize;
    for (row, &l) in eval.features().iter_rows().zip(eval_labels) {
        let best = (0..k)
            .filter(|&c| counts[c] > 0)
            .map(|c| {
                let d: f64 = row
                    .iter()
                    .zip(centroids.row(c))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (c, d)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(c, _)| c);
        if best == Some(l as usize) {
            correct += 1;
        }
    }
    Ok(correct as f64 / eval.len() as f64)
}
