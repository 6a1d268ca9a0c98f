use super::Layer;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// `f(x) = x` for `x >= 0`, `leak·x` otherwise. The derivative at exactly
/// zero is taken as 1.
#[derive(Clone, Debug)]
pub struct LeakyRelu {
    leak: f64,
    cache_input: Option<Matrix>,
}

impl LeakyRelu {
    pub fn new(leak: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&leak) {
            return Err(Error::Config(format!("leak must be in [0, 1), got {leak}")));
        }
        Ok(LeakyRelu {
            leak,
            cache_input: None,
        })
    }

    pub fn leak(&self) -> f64 {
        self.leak
    }
}

impl Layer for LeakyRelu {
    fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        let leak = self.leak;
        let y = x.map(|v| if v >= 0.0 { v } else { leak * v });
        self.cache_input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, dy: &Matrix) -> Result<Matrix> {
        let x = self
            .cache_input
            .as_ref()
            .ok_or_else(|| Error::State("leaky relu backward called before forward".into()))?;
        let slope = x.map(|v| if v >= 0.0 { 1.0 } else { self.leak });
        dy.mul(&slope)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax(z: &Matrix) -> Matrix {
    let mut out = z.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SeededRng;

    #[test]
    fn leaky_relu_values() {
        let mut act = LeakyRelu::new(0.2).unwrap();
        let y = act.forward(&Matrix::from_rows(&[[2.0, -2.0, 0.0]])).unwrap();
        assert_eq!(y.as_slice(), &[2.0, -0.4, 0.0]);
    }

    #[test]
    fn leaky_relu_backward_negative() {
        let mut act = LeakyRelu::new(0.2).unwrap();
        act.forward(&Matrix::from_rows(&[[-1.0, 0.0]])).unwrap();
        let dx = act.backward(&Matrix::from_rows(&[[3.0, 3.0]])).unwrap();
        assert!((dx.get(0, 0) - 0.6).abs() < 1e-15);
        // slope at exactly 0 is 1
        assert_eq!(dx.get(0, 1), 3.0);
    }

    #[test]
    fn leak_out_of_range() {
        assert!(LeakyRelu::new(1.0).is_err());
        assert!(LeakyRelu::new(-0.1).is_err());
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&Matrix::from_rows(&[[0.0, 0.0]]));
        assert_eq!(p.as_slice(), &[0.5, 0.5]);

        let p = softmax(&Matrix::from_rows(&[[0.0, 3f64.ln()]]));
        assert!((p.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((p.get(0, 1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_shift_invariance_and_rows() {
        let mut rng = SeededRng::new(8);
        let z = rng.randn(20, 7, 0.0, 5.0).unwrap();
        let p = softmax(&z);
        let q = softmax(&z.add_scalar(123.456));
        for (a, b) in p.as_slice().iter().zip(q.as_slice()) {
            assert!((a - b).abs() <= 1e-12);
        }
        for s in p.row_sums() {
            assert!((s - 1.0).abs() <= 1e-12);
        }
        assert!(p.as_slice().iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(p.argmax_rows(), z.argmax_rows());
    }

    #[test]
    fn softmax_large_logits_stay_finite() {
        let p = softmax(&Matrix::from_rows(&[[1000.0, -1000.0, 999.0]]));
        assert!(p.is_finite());
        assert!((p.row_sums()[0] - 1.0).abs() < 1e-12);
    }
}
