use rand::Rng;

use crate::real::Real;
use crate::tensor::Tensor;

/// Kaiming-uniform weights: `U(-b, b)` with `b = sqrt(6 / fan_in)` (ReLU gain).
pub fn kaiming_uniform<T: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    uniform(shape, bound, rng)
}

/// `U(-bound, bound)` entries.
pub fn uniform<T: Real, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::of(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::new(shape, data).expect("length matches shape")
}
