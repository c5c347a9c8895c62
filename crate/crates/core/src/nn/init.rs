//! Seeded weight initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;

pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn uniform(&mut self, shape: Vec<usize>, bound: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect();
        Tensor::new(shape, data)
    }

    /// Fan-in-scaled uniform for conv kernels `[kh, kw, ic, oc]`.
    pub fn conv_kernel(&mut self, kh: usize, kw: usize, ic: usize, oc: usize) -> Tensor {
        let fan_in = (kh * kw * ic) as f64;
        self.uniform(vec![kh, kw, ic, oc], (6.0 / fan_in).sqrt())
    }

    /// Depthwise kernel `[kh, kw, c]`; fan-in is the spatial tap count.
    pub fn depthwise_kernel(&mut self, kh: usize, kw: usize, c: usize) -> Tensor {
        let fan_in = (kh * kw) as f64;
        self.uniform(vec![kh, kw, c], (6.0 / fan_in).sqrt())
    }

    pub fn dense(&mut self, fan_in: usize, fan_out: usize) -> Tensor {
        self.uniform(vec![fan_in, fan_out], (6.0 / fan_in as f64).sqrt())
    }

    /// Simple scaled uniform for recurrent weights.
    pub fn lstm(&mut self, fan_in: usize, fan_out: usize) -> Tensor {
        self.uniform(vec![fan_in, fan_out], 1.0 / (fan_in as f64).sqrt())
    }
}
