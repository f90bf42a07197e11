use rand::Rng;

use super::{numel, Scalar, Tensor};

/// Values drawn uniformly from `[-bound, bound]`.
pub fn uniform<F: Scalar, R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<F> {
    let data = (0..numel(shape))
        .map(|_| F::of(rng.gen_range(-bound..=bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

/// Weight matrix `[fan_in, fan_out]` scaled by `1 / sqrt(fan_in)`.
pub fn fan_in_uniform<F: Scalar, R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<F> {
    uniform(&[fan_in, fan_out], 1.0 / (fan_in as f64).sqrt(), rng)
}
