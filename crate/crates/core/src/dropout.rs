use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// Training-time dropout drawing from the run's seeded generator.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut ChaCha8Rng,
}

impl<'r> Dropout<'r> {
    pub fn new(rate: f64, rng: &'r mut ChaCha8Rng) -> Self {
        Self { rate, rng }
    }

    /// 0/1 keep mask with keep probability `1 - rate`.
    pub fn keep_mask(&mut self, rows: usize, cols: usize) -> Tensor {
        let rate = self.rate;
        Tensor::from_fn(rows, cols, |_, _| {
            if rate > 0.0 && self.rng.gen::<f64>() < rate {
                0.0
            } else {
                1.0
            }
        })
    }

    /// Inverted-dropout multiplier: kept entries are scaled by `1 / (1 - rate)`.
    pub fn scaled_mask(&mut self, rows: usize, cols: usize) -> Tensor {
        let scale = 1.0 / (1.0 - self.rate);
        self.keep_mask(rows, cols).map(|k| k * scale)
    }
}
