use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub channels: usize,
    pub size: usize,
    pub samples_per_class: usize,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_classes: 4,
            channels: 1,
            size: 16,
            samples_per_class: 64,
            noise: 0.6,
        }
    }
}

/// Oriented sinusoidal gratings: class `c` has orientation `c·π/K`, with random
/// phase, frequency, contrast and per-channel gain, confined to a random
/// square patch and buried in Gaussian noise.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub seed: u64,
    pub config: SyntheticConfig,
    /// `[N, channels, size, size]`
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl SyntheticDataset {
    pub fn generate(config: SyntheticConfig, seed: u64) -> Result<Self> {
        let SyntheticConfig {
            num_classes,
            channels,
            size,
            samples_per_class,
            noise,
        } = config;
        if num_classes < 2 || channels == 0 || size < 4 || samples_per_class == 0 {
            return Err(Error::param(
                "dataset needs >= 2 classes, >= 1 channel, size >= 4 and >= 1 sample per class",
            ));
        }
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(Error::param(format!("noise must be finite and non-negative, got {noise}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gauss = Normal::new(0.0, 1.0).expect("unit normal");
        let mut labels: Vec<usize> = (0..num_classes)
            .flat_map(|c| std::iter::repeat_n(c, samples_per_class))
            .collect();
        labels.shuffle(&mut rng);
        let plane = size * size;
        let mut data = Vec::with_capacity(labels.len() * channels * plane);
        for &label in &labels {
            let theta = label as f64 * PI / num_classes as f64 + rng.random_range(-0.1..0.1);
            let freq = rng.random_range(0.18..0.32);
            let phase = rng.random_range(0.0..2.0 * PI);
            let contrast = rng.random_range(0.6..1.0);
            let side = rng.random_range(size / 2..=size);
            let (oy, ox) = (rng.random_range(0..=size - side), rng.random_range(0..=size - side));
            let (c, s) = (theta.cos(), theta.sin());
            for _ in 0..channels {
                let gain = rng.random_range(0.5..1.0);
                for y in 0..size {
                    for x in 0..size {
                        let inside = (oy..oy + side).contains(&y) && (ox..ox + side).contains(&x);
                        let signal = if inside {
                            contrast * gain * (2.0 * PI * freq * (x as f64 * c + y as f64 * s) + phase).sin()
                        } else {
                            0.0
                        };
                        data.push(signal + noise * gauss.sample(&mut rng));
                    }
                }
            }
        }
        let images = Tensor::from_vec(&[labels.len(), channels, size, size], data)?;
        Ok(SyntheticDataset {
            seed,
            config,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Gathers the samples at `indices` into one batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let d = self.images.dims();
        let per = d[1] * d[2] * d[3];
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::shape(format!("sample {i} out of range for {} samples", self.len())));
            }
            data.extend_from_slice(&self.images.data()[i * per..][..per]);
            labels.push(self.labels[i]);
        }
        Ok((Tensor::from_vec(&[indices.len(), d[1], d[2], d[3]], data)?, labels))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let cfg = SyntheticConfig {
            samples_per_class: 5,
            ..SyntheticConfig::default()
        };
        let a = SyntheticDataset::generate(cfg, 3).unwrap();
        let b = SyntheticDataset::generate(cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.images, SyntheticDataset::generate(cfg, 4).unwrap().images);
        for c in 0..4 {
            assert_eq!(a.labels.iter().filter(|&&l| l == c).count(), 5);
        }
        assert_eq!(a.images.dims(), &[20, 1, 16, 16]);
    }

    #[test]
    fn batch_gathers_rows() {
        let cfg = SyntheticConfig {
            samples_per_class: 2,
            ..SyntheticConfig::default()
        };
        let d = SyntheticDataset::generate(cfg, 0).unwrap();
        let (x, y) = d.batch(&[3, 1]).unwrap();
        assert_eq!(y, vec![d.labels[3], d.labels[1]]);
        assert_eq!(&x.data()[..256], &d.images.data()[3 * 256..4 * 256]);
        assert!(d.batch(&[8]).is_err());
    }
}
