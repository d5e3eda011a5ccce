//! Seeded parameter initialization.

use crate::error::Result;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Uniform Glorot initialization: values in ±sqrt(6/(fan_in+fan_out)).
/// The returned tensor is marked trainable.
pub fn glorot_uniform(
    shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
    rng: &mut SplitMix64,
) -> Result<Tensor> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Ok(Tensor::from_fn(shape, |_| rng.range(-bound, bound))?.with_grad())
}

/// All-zero trainable tensor (bias initialization).
pub fn zeros_param(shape: Vec<usize>) -> Result<Tensor> {
    Ok(Tensor::zeros(shape)?.with_grad())
}

/// Constant-filled trainable tensor.
pub fn filled_param(shape: Vec<usize>, value: f64) -> Result<Tensor> {
    Ok(Tensor::filled(shape, value)?.with_grad())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glorot_respects_bound_and_seed() {
        let mut rng = SplitMix64::new(9);
        let t = glorot_uniform(vec![3, 3, 2, 4], 18, 36, &mut rng).unwrap();
        let bound = (6.0 / 54.0f64).sqrt();
        assert!(t.data().iter().all(|x| x.abs() <= bound));
        assert!(t.requires_grad());
        let mut rng2 = SplitMix64::new(9);
        let t2 = glorot_uniform(vec![3, 3, 2, 4], 18, 36, &mut rng2).unwrap();
        assert_eq!(t.data(), t2.data());
    }
}
