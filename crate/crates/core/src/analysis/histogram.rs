use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 80;

/// Uniform-width histogram. An empty histogram has no edges and no counts.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub tag: String,
}

impl Histogram {
    /// Bins spanning `[min, max]` of `values`.
    pub fn new(values: &[f64], bins: usize, tag: impl Into<String>) -> Result<Self> {
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        Self::with_range(values, bins, lo, hi, tag)
    }

    /// Bins spanning `[lo, hi]`; values outside are clamped into the end bins.
    /// A degenerate range is widened by ±0.5.
    pub fn with_range(values: &[f64], bins: usize, lo: f64, hi: f64, tag: impl Into<String>) -> Result<Self> {
        let tag = tag.into();
        if bins == 0 {
            return Err(Error::Config("histogram needs at least one bin".into()));
        }
        if values.is_empty() {
            return Ok(Histogram {
                bin_edges: Vec::new(),
                counts: Vec::new(),
                tag,
            });
        }
        if values.iter().any(|v| !v.is_finite()) || !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(Error::Domain(format!("histogram '{tag}': non-finite data or range")));
        }
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        let width = (hi - lo) / bins as f64;
        let bin_edges: Vec<f64> = (0..=bins)
            .map(|i| if i == bins { hi } else { lo + i as f64 * width })
            .collect();
        let mut counts = vec![0u64; bins];
        for &v in values {
            let idx = ((v - lo) / width).floor();
            let idx = if idx < 0.0 { 0 } else { (idx as usize).min(bins - 1) };
            counts[idx] += 1;
        }
        Ok(Histogram {
            bin_edges,
            counts,
            tag,
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_width(&self, i: usize) -> f64 {
        self.bin_edges[i + 1] - self.bin_edges[i]
    }

    /// Probability density per bin: integrates to 1 over the edges.
    pub fn density(&self) -> Vec<f64> {
        let total = self.total() as f64;
        self.counts
            .iter()
            .enumerate()
            .map(|(i, &c)| if total > 0.0 { c as f64 / (total * self.bin_width(i)) } else { 0.0 })
            .collect()
    }
}
