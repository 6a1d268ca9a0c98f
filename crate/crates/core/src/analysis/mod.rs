//! Diagnostics for trained heads: accuracy, channel-output histograms split
//! by correct vs other class, FC weight sparsity, and 2D projections of the
//! softmax inputs.

mod export;
mod histogram;
mod pca;

use serde::{Deserialize, Serialize};

use crate::data::FeatureDataset;
use crate::error::{Error, Result};
use crate::layers::EvalStats;
use crate::linalg::Matrix;
use crate::model::BncModel;

pub use export::{
    read_histogram_csv, write_histogram_csv, write_matrix_csv, write_projection_csv,
    write_sparsity_csv,
};
pub use histogram::{Histogram, DEFAULT_BINS};
pub use pca::{pca_2d, project_2d, Projection, ProjectionMethod};

/// Default `|w|` threshold below which a weight counts as near zero.
pub const DEFAULT_SPARSITY_TAU: f64 = 1e-2;

/// Rows per forward pass when evaluating a whole dataset.
pub const EVAL_BATCH: usize = 256;

/// Fraction of rows whose eval-mode prediction (argmax, lowest index on ties)
/// equals the label. The model's mode is restored afterwards.
pub fn accuracy(model: &mut BncModel, ds: &FeatureDataset, eval_stats: EvalStats) -> Result<f64> {
    let labels = ds.require_labels()?;
    model.set_eval_stats(eval_stats);
    let preds = model.predict(ds.features(), EVAL_BATCH);
    model.set_eval_stats(EvalStats::Running);
    let preds = preds?;
    let correct = preds
        .iter()
        .zip(labels)
        .filter(|(&p, &l)| p == l as usize)
        .count();
    Ok(correct as f64 / ds.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum LayerTap {
    /// Output of the last fully connected layer.
    Fc2Out,
    /// Input to the softmax.
    SmIn,
}

impl LayerTap {
    pub fn tag(self) -> &'static str {
        match self {
            LayerTap::Fc2Out => "FC2_out",
            LayerTap::SmIn => "SM_in",
        }
    }
}

/// Eval-mode activations at `tap` for every row of `ds`.
pub fn tapped_activations(
    model: &mut BncModel,
    ds: &FeatureDataset,
    tap: LayerTap,
    eval_stats: EvalStats,
) -> Result<Matrix> {
    model.set_eval_stats(eval_stats);
    let taps = model.eval_taps(ds.features(), EVAL_BATCH);
    model.set_eval_stats(EvalStats::Running);
    let (fc2, sm) = taps?;
    Ok(match tap {
        LayerTap::Fc2Out => fc2,
        LayerTap::SmIn => sm,
    })
}

/// Activations pooled by whether the channel is the sample's true class.
#[derive(Clone, Debug, Default)]
pub struct ChannelPools {
    pub correct: Vec<f64>,
    pub other: Vec<f64>,
}

impl ChannelPools {
    pub fn from_activations(act: &Matrix, labels: &[u32]) -> Result<Self> {
        if act.rows() != labels.len() {
            return Err(Error::shape("channel pools", act.shape(), (labels.len(), 1)));
        }
        let mut pools = ChannelPools::default();
        for (row, &l) in act.iter_rows().zip(labels) {
            for (c, &v) in row.iter().enumerate() {
                if c == l as usize {
                    pools.correct.push(v);
                } else {
                    pools.other.push(v);
                }
            }
        }
        Ok(pools)
    }

    /// Mean true-class score minus mean other-class score.
    pub fn separation(&self) -> f64 {
        mean(&self.correct) - mean(&self.other)
    }

    pub fn other_std(&self) -> f64 {
        std_dev(&self.other)
    }

    pub fn correct_std(&self) -> f64 {
        std_dev(&self.correct)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

#[derive(Clone, Debug)]
pub struct ChannelHistograms {
    pub correct_class: Histogram,
    pub other_class: Histogram,
    /// One histogram per leading channel (at most four).
    pub per_channel: Vec<Histogram>,
    pub pools: ChannelPools,
}

/// Histograms of tapped activations: the true-class channel of every sample,
/// the remaining `k−1` channels, and each of the first four channels.
/// The correct/other histograms share bin edges spanning all pooled values.
pub fn channel_histograms(
    model: &mut BncModel,
    ds: &FeatureDataset,
    tap: LayerTap,
    bins: usize,
    eval_stats: EvalStats,
) -> Result<ChannelHistograms> {
    let labels = ds.require_labels()?;
    let act = tapped_activations(model, ds, tap, eval_stats)?;
    let pools = ChannelPools::from_activations(&act, labels)?;
    let (lo, hi) = min_max(act.as_slice());
    let tag = tap.tag();
    let correct_class = Histogram::with_range(&pools.correct, bins, lo, hi, format!("{tag}_correct"))?;
    let other_class = Histogram::with_range(&pools.other, bins, lo, hi, format!("{tag}_incorrect"))?;
    let per_channel = (0..act.cols().min(4))
        .map(|c| Histogram::new(&act.column(c), bins, format!("{tag}_ch{c}")))
        .collect::<Result<Vec<_>>>()?;
    Ok(ChannelHistograms {
        correct_class,
        other_class,
        per_channel,
        pools,
    })
}

fn min_max(xs: &[f64]) -> (f64, f64) {
    xs.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

#[derive(Clone, Debug, Serialize)]
pub struct LayerSparsity {
    pub layer: String,
    pub count: usize,
    pub fraction_near_zero: f64,
    pub mean_abs: f64,
    #[serde(skip)]
    pub histogram: Histogram,
}

#[derive(Clone, Debug, Serialize)]
pub struct SparsityReport {
    pub tau: f64,
    pub layers: Vec<LayerSparsity>,
}

/// Near-zero fraction, mean magnitude and histogram of each FC weight matrix.
pub fn weight_sparsity(model: &BncModel, tau: f64, bins: usize) -> Result<SparsityReport> {
    if tau.is_nan() || tau < 0.0 {
        return Err(Error::Config(format!("sparsity threshold must be >= 0, got {tau}")));
    }
    let layer = |name: &str, w: &Matrix| -> Result<LayerSparsity> {
        let values = w.as_slice();
        let near = values.iter().filter(|v| v.abs() < tau).count();
        Ok(LayerSparsity {
            layer: name.to_string(),
            count: values.len(),
            fraction_near_zero: near as f64 / values.len() as f64,
            mean_abs: values.iter().map(|v| v.abs()).sum::<f64>() / values.len() as f64,
            histogram: Histogram::new(values, bins, format!("{name}_weights"))?,
        })
    };
    Ok(SparsityReport {
        tau,
        layers: vec![
            layer("FC_1", &model.fc1.weight)?,
            layer("FC_2", &model.fc2.weight)?,
        ],
    })
}
