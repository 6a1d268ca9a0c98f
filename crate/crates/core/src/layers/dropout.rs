use super::{Layer, Mode};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, SeededRng};

/// Inverted dropout: kept activations are scaled by `1/(1−p)` at train time
/// so eval mode is exactly the identity.
#[derive(Clone, Debug)]
pub struct Dropout {
    p: f64,
    mode: Mode,
    mask: Option<Matrix>,
    mask_frozen: bool,
    rng: SeededRng,
}

impl Dropout {
    pub fn new(p: f64, rng: SeededRng) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout p must be in [0, 1), got {p}")));
        }
        Ok(Dropout {
            p,
            mode: Mode::Train,
            mask: None,
            mask_frozen: false,
            rng,
        })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn mask(&self) -> Option<&Matrix> {
        self.mask.as_ref()
    }

    /// Reuse the current mask on subsequent train-mode forwards instead of
    /// resampling (used for finite-difference checks).
    pub fn freeze_mask(&mut self, frozen: bool) {
        self.mask_frozen = frozen;
    }

    fn sample_mask(&mut self, rows: usize, cols: usize) -> Matrix {
        let keep = 1.0 - self.p;
        let scale = 1.0 / keep;
        let data = (0..rows * cols)
            .map(|_| if self.rng.uniform() < keep { scale } else { 0.0 })
            .collect();
        Matrix::from_vec(rows, cols, data).expect("mask values are finite")
    }
}

impl Layer for Dropout {
    fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        if self.mode == Mode::Eval || self.p == 0.0 {
            self.mask = None;
            return Ok(x.clone());
        }
        let reuse = self.mask_frozen && self.mask.as_ref().is_some_and(|m| m.shape() == x.shape());
        if !reuse {
            self.mask = Some(self.sample_mask(x.rows(), x.cols()));
        }
        x.mul(self.mask.as_ref().expect("mask set above"))
    }

    fn backward(&mut self, dy: &Matrix) -> Result<Matrix> {
        match &self.mask {
            Some(mask) => dy.mul(mask),
            None => Ok(dy.clone()),
        }
    }

    fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_is_bitwise_identity() {
        let mut d = Dropout::new(0.5, SeededRng::new(1)).unwrap();
        d.set_mode(Mode::Eval);
        let x = SeededRng::new(2).randn(4, 6, 0.0, 3.0).unwrap();
        assert_eq!(d.forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_p_is_identity_in_train() {
        let mut d = Dropout::new(0.0, SeededRng::new(1)).unwrap();
        let x = SeededRng::new(2).randn(4, 6, 0.0, 3.0).unwrap();
        assert_eq!(d.forward(&x).unwrap(), x);
        assert_eq!(d.backward(&x).unwrap(), x);
    }

    #[test]
    fn expectation_preserved() {
        let mut d = Dropout::new(0.5, SeededRng::new(11)).unwrap();
        let y = d.forward(&Matrix::filled(1, 100_000, 1.0)).unwrap();
        let mean = y.sum() / 100_000.0;
        assert!((mean - 1.0).abs() <= 0.01, "mean {mean}");
        assert!(y.as_slice().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn mask_resampled_each_train_forward() {
        let mut d = Dropout::new(0.5, SeededRng::new(3)).unwrap();
        let x = Matrix::filled(8, 8, 1.0);
        let a = d.forward(&x).unwrap();
        let b = d.forward(&x).unwrap();
        assert_ne!(a, b);
        d.freeze_mask(true);
        let c = d.forward(&x).unwrap();
        assert_eq!(b, c);
    }

    #[test]
    fn backward_uses_mask() {
        let mut d = Dropout::new(0.5, SeededRng::new(3)).unwrap();
        let x = Matrix::filled(3, 3, 1.0);
        let y = d.forward(&x).unwrap();
        assert_eq!(d.backward(&x).unwrap(), y);
    }

    #[test]
    fn invalid_p() {
        assert!(Dropout::new(1.0, SeededRng::new(0)).is_err());
        assert!(Dropout::new(-0.1, SeededRng::new(0)).is_err());
    }
}
