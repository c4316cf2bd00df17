use rand::Rng;

use crate::real::Real;
use crate::tensor::Tensor;

/// Uniform `±gain·sqrt(3 / fan_in)` initialisation: unit-gain preserves the
/// activation variance of a linear layer, gain `√2` compensates for ReLU.
pub fn fan_in_uniform<T: Real, R: Rng + ?Sized>(
    shape: impl Into<Vec<usize>>,
    fan_in: usize,
    gain: f64,
    rng: &mut R,
) -> Tensor<T> {
    let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::lit(rng.gen_range(-bound..=bound)))
}

pub fn uniform<T: Real, R: Rng + ?Sized>(shape: impl Into<Vec<usize>>, bound: f64, rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.gen_range(-bound..=bound)))
}
