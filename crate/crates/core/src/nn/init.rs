use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;

/// Seedable generator shared by initialization, shuffling and dropout.
pub type Rng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform samples in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glorot_within_limit_and_reproducible() {
        let a = glorot_uniform(&[8, 5], 5, 8, &mut seeded_rng(7));
        let b = glorot_uniform(&[8, 5], 5, 8, &mut seeded_rng(7));
        assert_eq!(a, b);
        let limit = (6.0f64 / 13.0).sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= limit));
    }
}
