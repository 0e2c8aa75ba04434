use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    #[default]
    Glorot,
    /// Uniform in ±sqrt(6 / fan_in).
    He,
}

impl InitScheme {
    pub fn bound(self, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            InitScheme::Glorot => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            InitScheme::He => (6.0 / fan_in.max(1) as f64).sqrt(),
        }
    }

    /// Samples a tensor of `shape` with the given fan sizes.
    pub fn sample<R: Rng + ?Sized>(self, shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
        let bound = self.bound(fan_in, fan_out);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        Tensor::new(shape.to_vec(), data).expect("sampled data matches shape")
    }
}

/// Glorot-uniform tensor of shape `[fan_in, fan_out]`.
pub fn xavier_init<R: Rng + ?Sized>(shape: [usize; 2], rng: &mut R) -> Tensor {
    InitScheme::Glorot.sample(&shape, shape[0], shape[1], rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn glorot_bound_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = xavier_init([100, 100], &mut rng);
        let bound = (6.0f64 / 200.0).sqrt();
        assert!((bound - 0.1732).abs() < 1e-4);
        assert!(t.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn same_seed_same_tensor() {
        let a = xavier_init([7, 5], &mut ChaCha8Rng::seed_from_u64(11));
        let b = xavier_init([7, 5], &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
    }

    #[test]
    fn glorot_variance() {
        // Var of U(-b, b) is b^2 / 3 = 2 / (fan_in + fan_out)
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = xavier_init([100, 100], &mut rng);
        let n = t.numel() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let target = 2.0 / 200.0;
        assert!((var - target).abs() / target < 0.1, "var {var}");
    }

    #[test]
    fn he_bound_uses_fan_in() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = InitScheme::He.sample(&[4, 24], 24, 4, &mut rng);
        let bound = 0.5;
        assert!(t.data().iter().all(|v| v.abs() <= bound));
        assert!(t.data().iter().any(|v| v.abs() > (6.0f64 / 28.0).sqrt()));
    }
}
