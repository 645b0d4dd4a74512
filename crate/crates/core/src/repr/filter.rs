use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ReprError;

/// Fixed stand-in for the learned feature extractors: channel aggregation
/// weights plus a small 1D kernel (applied along θ) and a square 2D kernel
/// (applied to the BEV plane).
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    weights: Vec<f64>,
    theta_kernel: Vec<f64>,
    plane_kernel: Vec<f64>,
    plane_size: usize,
}

/// Serializable description from which a bank is rebuilt deterministically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BankSpec {
    /// Uniform weights and identity kernels.
    #[default]
    Uniform,
    /// Random positive weights and 3-tap / 3×3 kernels drawn from the seed.
    Seeded { seed: u64 },
}

impl BankSpec {
    pub fn build(&self, channels: usize) -> FilterBank {
        match *self {
            BankSpec::Uniform => FilterBank::uniform(channels),
            BankSpec::Seeded { seed } => FilterBank::seeded(channels, seed),
        }
    }
}

impl FilterBank {
    pub fn new(
        weights: Vec<f64>,
        theta_kernel: Vec<f64>,
        plane_kernel: Vec<f64>,
    ) -> Result<Self, ReprError> {
        if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(ReprError::InvalidBank("weights must be nonnegative and finite"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(ReprError::InvalidBank("weights must sum to 1"));
        }
        if theta_kernel.len() % 2 == 0 || theta_kernel.iter().any(|v| !v.is_finite()) {
            return Err(ReprError::InvalidBank("theta kernel must have odd length"));
        }
        let plane_size = (plane_kernel.len() as f64).sqrt().round() as usize;
        if plane_size * plane_size != plane_kernel.len()
            || plane_size % 2 == 0
            || plane_kernel.iter().any(|v| !v.is_finite())
        {
            return Err(ReprError::InvalidBank("plane kernel must be odd and square"));
        }
        Ok(Self {
            weights,
            theta_kernel,
            plane_kernel,
            plane_size,
        })
    }

    pub fn uniform(channels: usize) -> Self {
        Self::new(vec![1.0 / channels as f64; channels], vec![1.0], vec![1.0])
            .expect("uniform bank is valid")
    }

    pub fn one_hot(channels: usize, channel: usize) -> Self {
        let mut w = vec![0.0; channels];
        w[channel] = 1.0;
        Self::new(w, vec![1.0], vec![1.0]).expect("one-hot bank is valid")
    }

    pub fn seeded(channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..channels).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let weights = raw.iter().map(|w| w / total).collect();
        let theta_kernel = (0..3).map(|_| rng.gen_range(0.2..1.0)).collect();
        let plane_kernel = (0..9).map(|_| rng.gen_range(0.2..1.0)).collect();
        Self::new(weights, theta_kernel, plane_kernel).expect("seeded bank is valid")
    }

    pub fn channels(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn theta_kernel(&self) -> &[f64] {
        &self.theta_kernel
    }

    pub fn plane_kernel(&self) -> (&[f64], usize) {
        (&self.plane_kernel, self.plane_size)
    }

    pub(crate) fn check_channels(&self, channels: usize) -> Result<(), ReprError> {
        if channels != self.channels() {
            return Err(ReprError::ChannelMismatch {
                bank: self.channels(),
                input: channels,
            });
        }
        Ok(())
    }
}
