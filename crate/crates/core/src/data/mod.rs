//! Feature datasets, file formats, minibatching and the synthetic
//! domain-shift generator.

mod bncf;
mod csv_import;
mod synthetic;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, SeededRng};
use crate::losses::OneHotLabels;

pub use bncf::{
    decode_features, encode_features, read_features, write_features, BNCF_MAGIC, BNCF_NAME_LEN, BNCF_VERSION,
};
pub use csv_import::read_csv;
pub use synthetic::{generate_shift_pair, nearest_centroid_accuracy, ShiftSpec};

/// `N×D` feature rows with optional labels in `0..num_classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDataset {
    features: Matrix,
    labels: Option<Vec<u32>>,
    num_classes: usize,
    domain: String,
}

impl FeatureDataset {
    pub fn new(
        features: Matrix,
        labels: Option<Vec<u32>>,
        num_classes: usize,
        domain: impl Into<String>,
    ) -> Result<Self> {
        if features.rows() == 0 || features.cols() == 0 {
            return Err(Error::Validation(format!(
                "dataset needs at least one row and column, got {:?}",
                features.shape()
            )));
        }
        if num_classes == 0 {
            return Err(Error::Validation("num_classes must be >= 1".into()));
        }
        if !features.is_finite() {
            return Err(Error::Validation("features contain non-finite values".into()));
        }
        if let Some(labels) = &labels {
            if labels.len() != features.rows() {
                return Err(Error::Validation(format!(
                    "{} labels for {} rows",
                    labels.len(),
                    features.rows()
                )));
            }
            if let Some((row, &l)) = labels
                .iter()
                .enumerate()
                .find(|(_, &l)| l as usize >= num_classes)
            {
                return Err(Error::Validation(format!(
                    "label {l} at row {row} is out of range for k={num_classes}"
                )));
            }
        }
        Ok(FeatureDataset {
            features,
            labels,
            num_classes,
            domain: domain.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn require_labels(&self) -> Result<&[u32]> {
        self.labels().ok_or_else(|| {
            Error::Usage(format!("dataset '{}' has no labels", self.domain))
        })
    }

    /// The same rows with labels removed.
    pub fn without_labels(&self) -> FeatureDataset {
        FeatureDataset {
            labels: None,
            ..self.clone()
        }
    }

    pub fn class_counts(&self) -> Option<Vec<usize>> {
        self.labels().map(|ls| {
            let mut counts = vec![0; self.num_classes];
            for &l in ls {
                counts[l as usize] += 1;
            }
            counts
        })
    }

    pub fn subset(&self, indices: &[usize]) -> FeatureDataset {
        FeatureDataset {
            features: self.features.select_rows(indices),
            labels: self
                .labels
                .as_ref()
                .map(|ls| indices.iter().map(|&i| ls[i]).collect()),
            num_classes: self.num_classes,
            domain: self.domain.clone(),
        }
    }

    /// Deterministic random split into `(rest, holdout)` with
    /// `round(fraction·N)` holdout rows. Both parts keep at least one row.
    pub fn split(&self, holdout_fraction: f64, seed: u64) -> Result<(FeatureDataset, FeatureDataset)> {
        if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
            return Err(Error::Config(format!(
                "holdout fraction must be in (0, 1), got {holdout_fraction}"
            )));
        }
        let n = self.len();
        let held = ((holdout_fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1));
        if n < 2 {
            return Err(Error::Validation("cannot split a single-row dataset".into()));
        }
        let perm = SeededRng::derived(seed, 0x5_1_1_7).permutation(n);
        let (hold, rest) = perm.split_at(held);
        let mut hold = hold.to_vec();
        let mut rest = rest.to_vec();
        hold.sort_unstable();
        rest.sort_unstable();
        Ok((self.subset(&rest), self.subset(&hold)))
    }

    /// Features and one-hot labels (when present) for the given rows.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let labels = match &self.labels {
            Some(ls) => {
                let picked: Vec<u32> = indices.iter().map(|&i| ls[i]).collect();
                Some(OneHotLabels::from_indices(&picked, self.num_classes)?)
            }
            None => None,
        };
        Ok(Batch {
            features: self.features.select_rows(indices),
            labels,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Option<OneHotLabels>,
}

/// Shuffled minibatch index lists, one fresh permutation per epoch.
///
/// With `drop_degenerate`, a trailing batch of exactly one row is dropped
/// (train-mode batch norm cannot use it) and counted in [`dropped`].
///
/// [`dropped`]: BatchIterator::dropped
#[derive(Clone, Debug)]
pub struct BatchIterator {
    len: usize,
    batch_size: usize,
    rng: SeededRng,
    drop_degenerate: bool,
    dropped: usize,
}

impl BatchIterator {
    pub fn new(len: usize, batch_size: usize, rng: SeededRng, drop_degenerate: bool) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(BatchIterator {
            len,
            batch_size,
            rng,
            drop_degenerate,
            dropped: 0,
        })
    }

    /// Number of rows dropped so far.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn next_epoch(&mut self) -> Vec<Vec<usize>> {
        let perm = self.rng.permutation(self.len);
        let mut out: Vec<Vec<usize>> = perm.chunks(self.batch_size).map(<[usize]>::to_vec).collect();
        if self.drop_degenerate && out.last().is_some_and(|b| b.len() == 1) {
            out.pop();
            self.dropped += 1;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sizes(batches: &[Vec<usize>]) -> Vec<usize> {
        batches.iter().map(Vec::len).collect()
    }

    #[test]
    fn batch_sizes() {
        let mut it = BatchIterator::new(10, 4, SeededRng::new(1), true).unwrap();
        assert_eq!(sizes(&it.next_epoch()), vec![4, 4, 2]);

        let mut it = BatchIterator::new(9, 4, SeededRng::new(1), true).unwrap();
        let epoch = it.next_epoch();
        assert_eq!(sizes(&epoch), vec![4, 4]);
        assert_eq!(it.dropped(), 1);

        let mut it = BatchIterator::new(9, 4, SeededRng::new(1), false).unwrap();
        assert_eq!(sizes(&it.next_epoch()), vec![4, 4, 1]);
    }

    #[test]
    fn epoch_covers_every_row_once() {
        let mut it = BatchIterator::new(9, 4, SeededRng::new(3), true).unwrap();
        for _ in 0..3 {
            let mut all: Vec<usize> = it.next_epoch().concat();
            assert_eq!(all.len(), 8);
            all.sort_unstable();
            all.dedup();
            assert_eq!(all.len(), 8);
            assert!(all.iter().all(|&i| i < 9));
        }
        let mut it = BatchIterator::new(10, 3, SeededRng::new(3), false).unwrap();
        let mut all = it.next_epoch().concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn epochs_reshuffle() {
        let mut it = BatchIterator::new(50, 50, SeededRng::new(3), false).unwrap();
        assert_ne!(it.next_epoch(), it.next_epoch());
    }

    #[test]
    fn dataset_validation() {
        let x = Matrix::zeros(2, 3);
        assert!(FeatureDataset::new(x.clone(), Some(vec![0, 2]), 2, "d").is_err());
        assert!(FeatureDataset::new(x.clone(), Some(vec![0]), 2, "d").is_err());
        assert!(FeatureDataset::new(Matrix::zeros(0, 3), None, 2, "d").is_err());
        assert!(FeatureDataset::new(x, Some(vec![0, 1]), 2, "d").is_ok());
    }

    #[test]
    fn batch_one_hot() {
        let ds = FeatureDataset::new(
            Matrix::from_rows(&[[1.0], [2.0], [3.0]]),
            Some(vec![2, 0, 1]),
            3,
            "d",
        )
        .unwrap();
        let b = ds.batch(&[2, 0]).unwrap();
        assert_eq!(b.features, Matrix::from_rows(&[[3.0], [1.0]]));
        assert_eq!(b.labels.unwrap().indices(), vec![1, 2]);
        assert!(ds.without_labels().batch(&[0]).unwrap().labels.is_none());
    }

    #[test]
    fn split_partitions_rows() {
        let x = Matrix::from_vec(10, 1, (0..10).map(f64::from).collect()).unwrap();
        let ds = FeatureDataset::new(x, None, 1, "d").unwrap();
        let (rest, hold) = ds.split(0.3, 1).unwrap();
        assert_eq!((rest.len(), hold.len()), (7, 3));
        let mut all: Vec<f64> = rest.features().as_slice().to_vec();
        all.extend_from_slice(hold.features().as_slice());
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..10).map(f64::from).collect::<Vec<_>>());
        assert!(ds.split(0.0, 1).is_err());
    }
}
