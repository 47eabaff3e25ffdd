//! Glorot (Xavier) uniform initialization.

use rand::Rng;

use crate::tensor::Tensor;

/// `(fan_in, fan_out)` for a weight shape.
///
/// Dense weights are `[out, in]`, convolution filters `[out, in, k, k]`
/// (receptive field folded into both fans), and LSTM kernels `[4u, in]`.
pub fn glorot_fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (*n, *n),
        [out, inp] => (*inp, *out),
        [out, inp, rest @ ..] => {
            let field: usize = rest.iter().product();
            (inp * field, out * field)
        }
    }
}

pub fn glorot_limit(shape: &[usize]) -> f64 {
    let (fan_in, fan_out) = glorot_fans(shape);
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub fn glorot_uniform(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let limit = glorot_limit(shape);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_bound() {
        let t = glorot_uniform(&[100, 100], &mut ChaCha8Rng::seed_from_u64(3));
        let limit = (6.0f64 / 200.0).sqrt();
        assert!((limit - 0.173_205_080_756_887_7).abs() < 1e-15);
        assert!(t.data().iter().all(|v| v.abs() <= limit));
        assert!(t.max() > 0.9 * limit && t.min() < -0.9 * limit);
    }

    #[test]
    fn conv_fans_include_receptive_field() {
        assert_eq!(glorot_fans(&[16, 6, 3, 3]), (54, 144));
        assert_eq!(glorot_fans(&[7, 5]), (5, 7));
    }

    #[test]
    fn seeded() {
        let a = glorot_uniform(&[8, 9], &mut ChaCha8Rng::seed_from_u64(11));
        let b = glorot_uniform(&[8, 9], &mut ChaCha8Rng::seed_from_u64(11));
        let c = glorot_uniform(&[8, 9], &mut ChaCha8Rng::seed_from_u64(12));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn mean_is_near_zero() {
        let n = 100_000;
        let t = glorot_uniform(&[n / 100, 100], &mut ChaCha8Rng::seed_from_u64(5));
        let limit = glorot_limit(&[n / 100, 100]);
        let mean = t.data().iter().sum::<f64>() / n as f64;
        // Uniform on [-l, l] has standard deviation l / √3.
        let sigma = limit / 3f64.sqrt() / (n as f64).sqrt();
        assert!(mean.abs() <= 3.0 * sigma, "mean {mean}, 3σ {}", 3.0 * sigma);
    }
}
