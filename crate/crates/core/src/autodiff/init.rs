use rand::Rng;

use super::{Real, Tensor};

/// Uniform in `±sqrt(1 / fan_in)`.
pub fn fan_in_uniform<R: Real>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<R> {
    let bound = (1.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| R::lit(rng.random_range(-bound..=bound)))
}

/// `d x d` identity matrix.
pub fn identity<R: Real>(d: usize) -> Tensor<R> {
    Tensor::from_fn(&[d, d], |i| if i / d == i % d { R::one() } else { R::zero() })
}
