use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

/// Latent noise grid of shape `(d, m, n, o)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector(Tensor);

impl LatentVector {
    pub fn new(tensor: Tensor) -> Self {
        Self(tensor)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn depth(&self) -> usize {
        self.0.channels()
    }

    pub fn spatial(&self) -> [usize; 3] {
        self.0.spatial()
    }
}

/// Standard normal latent grid, deterministic in `seed`.
pub fn sample_noise(d: usize, m: usize, n: usize, o: usize, seed: u64) -> LatentVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = d * m * n * o;
    let data: Vec<f32> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
    LatentVector(Tensor::new([d, m, n, o], data).expect("length matches shape"))
}

/// `steps` latents `beta * start + (1 - beta) * end` with `beta` going
/// uniformly from 1 to 0; the endpoints reproduce the inputs exactly.
pub fn interpolate_latent(
    start: &LatentVector,
    end: &LatentVector,
    steps: usize,
) -> Result<Vec<LatentVector>> {
    if start.0.shape() != end.0.shape() {
        return Err(Error::Shape(format!(
            "latent shapes differ: {:?} vs {:?}",
            start.0.shape(),
            end.0.shape()
        )));
    }
    if steps < 2 {
        return Err(Error::Validation("interpolation needs at least two steps".into()));
    }
    Ok(interpolation_weights(steps)
        .into_iter()
        .map(|beta| {
            let data = if beta == 1.0 {
                start.0.data().to_vec()
            } else if beta == 0.0 {
                end.0.data().to_vec()
            } else {
                let b = beta as f32;
                start
                    .0
                    .data()
                    .iter()
                    .zip(end.0.data())
                    .map(|(&s, &e)| b * s + (1.0 - b) * e)
                    .collect()
            };
            LatentVector(Tensor::new(start.0.shape(), data).expect("same shape"))
        })
        .collect())
}

/// `beta_i = 1 - i / (steps - 1)`.
pub fn interpolation_weights(steps: usize) -> Vec<f64> {
    (0..steps).map(|i| 1.0 - i as f64 / (steps - 1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_statistics_and_determinism() {
        let z = sample_noise(512, 1, 1, 1, 42);
        assert_eq!(z, sample_noise(512, 1, 1, 1, 42));
        let n = z.tensor().len() as f64;
        let mean = z.tensor().data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = z.tensor().data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.14, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.1, "std {}", var.sqrt());
        assert_ne!(z, sample_noise(512, 1, 1, 1, 43));
        assert_eq!(sample_noise(512, 3, 3, 3, 1).tensor().shape(), [512, 3, 3, 3]);
    }

    #[test]
    fn interpolation_grid() {
        assert_eq!(interpolation_weights(5), vec![1.0, 0.75, 0.5, 0.25, 0.0]);
        let a = sample_noise(4, 2, 1, 1, 1);
        let b = sample_noise(4, 2, 1, 1, 2);
        let path = interpolate_latent(&a, &b, 3).unwrap();
        assert_eq!(path[0], a);
        assert_eq!(path[2], b);
        for ((m, x), y) in path[1].tensor().data().iter().zip(a.tensor().data()).zip(b.tensor().data()) {
            assert!((m - 0.5 * (x + y)).abs() < 1e-6);
        }
        assert!(interpolate_latent(&a, &sample_noise(4, 1, 1, 1, 0), 3).is_err());
        assert!(interpolate_latent(&a, &b, 1).is_err());
    }
}
