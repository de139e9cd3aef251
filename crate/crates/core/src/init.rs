//! Parameter initialisation.

use crate::rng::{self, Rng};
use crate::tensor::Tensor;

/// Xavier/Glorot uniform: `U(−a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform(rng: &mut Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng::uniform(rng, -a, a))
}

/// Weight matrix `[rows × cols]` mapping `rows` inputs to `cols` outputs.
pub fn xavier_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    xavier_uniform(rng, &[rows, cols], rows, cols)
}

/// Convolution kernel `[out × in × kh × kw]`.
pub fn xavier_kernel(rng: &mut Rng, c_out: usize, c_in: usize, kh: usize, kw: usize) -> Tensor {
    xavier_uniform(rng, &[c_out, c_in, kh, kw], c_in * kh * kw, c_out * kh * kw)
}
