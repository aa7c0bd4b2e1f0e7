use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::matrix::Matrix;

/// Half-width of the Glorot-uniform support for a `fan_out × fan_in` matrix.
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Glorot-uniform matrix drawn from an existing generator.
pub fn glorot_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let limit = glorot_limit(cols, rows);
    let mut m = Matrix::zeros(rows, cols);
    for v in m.as_mut_slice() {
        *v = rng.random_range(-limit..limit);
    }
    m
}

/// Glorot-uniform `rows × cols` matrix, reproducible per seed.
pub fn init_params(rows: usize, cols: usize, seed: u64) -> Matrix {
    glorot_uniform(rows, cols, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible_per_seed() {
        assert_eq!(init_params(7, 5, 42), init_params(7, 5, 42));
        assert_ne!(init_params(7, 5, 42), init_params(7, 5, 43));
    }

    #[test]
    fn entries_within_support() {
        let m = init_params(200, 160, 1);
        let limit = glorot_limit(160, 200);
        assert!(m.as_slice().iter().all(|v| v.abs() <= limit));
    }

    #[test]
    fn empirical_mean_is_centered() {
        // 100_000 draws of U(-a, a): σ = a/√3, standard error σ/√n.
        let (rows, cols) = (400, 250);
        let m = init_params(rows, cols, 7);
        let n = (rows * cols) as f64;
        let a = glorot_limit(cols, rows);
        let mean = m.as_slice().iter().sum::<f64>() / n;
        let se = a / 3f64.sqrt() / n.sqrt();
        assert!(mean.abs() <= 3.0 * se, "mean {mean} vs 3σ = {}", 3.0 * se);
        let var = m.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!((var - a * a / 3.0).abs() / (a * a / 3.0) < 0.02);
    }
}
