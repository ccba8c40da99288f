//! Parameter initialization.

use ita_autograd::{ParamId, ParamSet, Tensor};

use crate::error::Result;
use crate::rng::CounterRng;

/// Registers parameters under a name prefix with Glorot-uniform weights.
pub struct Initializer<'a> {
    pub params: &'a mut ParamSet,
    rng: CounterRng,
}

impl<'a> Initializer<'a> {
    pub fn new(params: &'a mut ParamSet, seed: u64) -> Self {
        Self {
            params,
            rng: CounterRng::new(seed, 0),
        }
    }

    /// Uniform in ±√(6 / (rows + cols)).
    pub fn glorot(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| self.rng.uniform(-limit, limit)).collect();
        Ok(self.params.insert(name, Tensor::from_vec(rows, cols, data))?)
    }

    pub fn filled(&mut self, name: &str, rows: usize, cols: usize, value: f64) -> Result<ParamId> {
        Ok(self.params.insert(name, Tensor::filled(rows, cols, value))?)
    }

    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        self.filled(name, rows, cols, 0.0)
    }
}
