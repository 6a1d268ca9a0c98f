//! Cross-entropy (supervised source training) and prediction entropy
//! (unsupervised target adaptation), with gradients taken with respect to the
//! softmax input. Logs are natural; both losses average over the batch rows.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Probabilities are clamped to this before taking a log.
pub const PROB_FLOOR: f64 = 1e-12;

/// `N×k` indicator matrix with a single 1 per row.
#[derive(Clone, Debug, PartialEq)]
pub struct OneHotLabels(Matrix);

impl OneHotLabels {
    pub fn from_indices(labels: &[u32], k: usize) -> Result<Self> {
        let mut m = Matrix::zeros(labels.len(), k);
        for (i, &l) in labels.iter().enumerate() {
            if l as usize >= k {
                return Err(Error::Validation(format!(
                    "label {l} at row {i} is out of range for k={k}"
                )));
            }
            m.set(i, l as usize, 1.0);
        }
        Ok(OneHotLabels(m))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn indices(&self) -> Vec<usize> {
        self.0.argmax_rows()
    }
}

fn check_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn safe_ln(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

pub fn cross_entropy(probs: &Matrix, labels: &OneHotLabels) -> Result<f64> {
    let y = labels.matrix();
    check_shape("cross_entropy", probs, y)?;
    let n = probs.rows().max(1) as f64;
    let total: f64 = probs
        .as_slice()
        .iter()
        .zip(y.as_slice())
        .filter(|(_, &t)| t != 0.0)
        .map(|(&p, &t)| -t * safe_ln(p))
        .sum();
    Ok(total / n)
}

/// Mean per-row Shannon entropy of a batch of probability rows.
pub fn entropy(probs: &Matrix) -> f64 {
    let n = probs.rows().max(1) as f64;
    probs
        .as_slice()
        .iter()
        .map(|&p| -p * safe_ln(p))
        .sum::<f64>()
        / n
}

/// Entropy of each row separately.
pub fn row_entropies(probs: &Matrix) -> Vec<f64> {
    probs
        .iter_rows()
        .map(|r| r.iter().map(|&p| -p * safe_ln(p)).sum())
        .collect()
}

/// `(ŷ − y)/N`, the gradient of mean cross-entropy through softmax.
pub fn ce_grad_wrt_presoftmax(probs: &Matrix, labels: &OneHotLabels) -> Result<Matrix> {
    check_shape("ce_grad", probs, labels.matrix())?;
    Ok(probs.sub(labels.matrix())?.scale(1.0 / probs.rows().max(1) as f64))
}

/// Gradient of mean entropy through softmax:
/// `(1/N)·ŷ ⊙ (s̄ − s)` with `s = ln ŷ + 1` and `s̄ = Σ_c ŷ_c s_c` per row.
pub fn entropy_grad_wrt_presoftmax(probs: &Matrix) -> Matrix {
    let inv_n = 1.0 / probs.rows().max(1) as f64;
    let mut out = Matrix::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let p = probs.row(r);
        let s: Vec<f64> = p.iter().map(|&v| safe_ln(v) + 1.0).collect();
        let s_bar: f64 = p.iter().zip(&s).map(|(a, b)| a * b).sum();
        for (c, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = inv_n * p[c] * (s_bar - s[c]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::softmax;
    use crate::linalg::SeededRng;

    fn uniform(n: usize, k: usize) -> Matrix {
        Matrix::filled(n, k, 1.0 / k as f64)
    }

    #[test]
    fn perfect_predictions_have_zero_ce() {
        let y = OneHotLabels::from_indices(&[0, 2, 1], 3).unwrap();
        assert!(cross_entropy(y.matrix(), &y).unwrap() <= 1e-11);
    }

    #[test]
    fn uniform_ce_is_ln_k() {
        let y = OneHotLabels::from_indices(&[0, 64, 12, 3], 65).unwrap();
        let ce = cross_entropy(&uniform(4, 65), &y).unwrap();
        assert!((ce - 65f64.ln()).abs() < 1e-12);
        assert!((ce - 4.17438).abs() < 1e-5);
    }

    #[test]
    fn quarter_true_class_ce_is_ln4() {
        let probs = Matrix::from_rows(&[[0.25, 0.75], [0.75, 0.25]]);
        let y = OneHotLabels::from_indices(&[0, 1], 2).unwrap();
        let ce = cross_entropy(&probs, &y).unwrap();
        assert!((ce - 4f64.ln()).abs() < 1e-12);
        assert!((ce - 1.38629).abs() < 1e-5);
    }

    #[test]
    fn ce_equals_negative_log_true_class() {
        let probs = softmax(&SeededRng::new(1).randn(6, 5, 0.0, 2.0).unwrap());
        let labels = [0u32, 4, 2, 2, 1, 3];
        let y = OneHotLabels::from_indices(&labels, 5).unwrap();
        let direct: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -probs.get(i, l as usize).ln())
            .sum::<f64>()
            / 6.0;
        assert_eq!(cross_entropy(&probs, &y).unwrap(), direct);
    }

    #[test]
    fn entropy_examples() {
        let one_hot = OneHotLabels::from_indices(&[1, 0], 2).unwrap();
        assert!(entropy(one_hot.matrix()) <= 1e-11);
        assert!((entropy(&uniform(3, 65)) - 65f64.ln()).abs() < 1e-12);
        assert!((entropy(&uniform(2, 2)) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn entropy_bounded_by_ln_k() {
        let mut rng = SeededRng::new(12);
        for k in [2usize, 5, 65] {
            let uni = entropy(&uniform(1, k));
            let perturbed = softmax(&rng.randn(1, k, 0.0, 1e-3).unwrap());
            assert!(entropy(&perturbed) < uni);
            assert!(entropy(&perturbed) <= (k as f64).ln());
        }
    }

    #[test]
    fn ce_grad_hand_case() {
        let probs = Matrix::from_rows(&[[0.75, 0.25]]);
        let y = OneHotLabels::from_indices(&[0], 2).unwrap();
        let g = ce_grad_wrt_presoftmax(&probs, &y).unwrap();
        assert_eq!(g.as_slice(), &[-0.25, 0.25]);
        let zero = ce_grad_wrt_presoftmax(y.matrix(), &y).unwrap();
        assert_eq!(zero, Matrix::zeros(1, 2));
    }

    #[test]
    fn entropy_grad_stationary_points() {
        assert!(entropy_grad_wrt_presoftmax(&uniform(3, 7)).max_abs() <= 1e-15);
        let near_one_hot = softmax(&Matrix::from_rows(&[[40.0, 0.0, 0.0]]));
        assert!(entropy_grad_wrt_presoftmax(&near_one_hot).max_abs() < 1e-12);
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let mut rng = SeededRng::new(3);
        let probs = softmax(&rng.randn(9, 6, 0.0, 3.0).unwrap());
        let labels: Vec<u32> = (0..9).map(|i| i % 6).collect();
        let y = OneHotLabels::from_indices(&labels, 6).unwrap();
        for s in ce_grad_wrt_presoftmax(&probs, &y).unwrap().row_sums() {
            assert!(s.abs() <= 1e-12);
        }
        for s in entropy_grad_wrt_presoftmax(&probs).row_sums() {
            assert!(s.abs() <= 1e-12);
        }
    }

    #[test]
    fn entropy_descent_decreases_entropy() {
        let mut rng = SeededRng::new(77);
        for _ in 0..100 {
            let mut z = rng.randn(1, 5, 0.0, 1.0).unwrap();
            let mut prev = entropy(&softmax(&z));
            for _ in 0..10 {
                let g = entropy_grad_wrt_presoftmax(&softmax(&z));
                z = z.sub(&g.scale(0.01)).unwrap();
                let h = entropy(&softmax(&z));
                assert!(h < prev, "{h} !< {prev}");
                prev = h;
            }
        }
    }

    #[test]
    fn label_out_of_range() {
        assert!(OneHotLabels::from_indices(&[3], 3).is_err());
    }

    #[test]
    fn shape_mismatch() {
        let y = OneHotLabels::from_indices(&[0], 2).unwrap();
        assert!(cross_entropy(&Matrix::zeros(1, 3), &y).is_err());
        assert!(ce_grad_wrt_presoftmax(&Matrix::zeros(2, 2), &y).is_err());
    }
}
