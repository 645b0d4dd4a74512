//! Forward-evaluated supervision signals: a bimodal-target KL loss on the
//! rotation correlation and a softmax NLL loss on the translation correlation.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correlation::{log_sum_exp, CorrMap, CorrVector};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("ground-truth shift ({0}, {1}) outside the correlation map")]
    ShiftOutOfRange(i64, i64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_r: f64,
    pub lambda_t: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_r: 1.0,
            lambda_t: 1.0,
        }
    }
}

impl LossWeights {
    pub fn combine(&self, rotation: f64, translation: f64) -> f64 {
        self.lambda_r * rotation + self.lambda_t * translation
    }
}

pub const DEFAULT_SIGMA_BINS: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RotationTarget {
    pub p: Vec<f64>,
    pub sigma_bins: f64,
}

/// Equal-weight wrapped Gaussians at the bins of `θ*` and `θ* − π`.
pub fn bimodal_target(theta_star: f64, n_theta: usize, sigma_bins: f64) -> RotationTarget {
    assert!(n_theta >= 2 && n_theta % 2 == 0, "n_theta must be even");
    assert!(sigma_bins > 0.0, "sigma must be positive");
    let n = n_theta as f64;
    let mode = theta_star.rem_euclid(TAU) / TAU * n;
    let twin = (theta_star - PI).rem_euclid(TAU) / TAU * n;
    let bump = |d: usize, m: f64| {
        let diff = (d as f64 - m).rem_euclid(n);
        let circ = diff.min(n - diff);
        (-0.5 * (circ / sigma_bins).powi(2)).exp()
    };
    let raw: Vec<f64> = (0..n_theta).map(|d| bump(d, mode) + bump(d, twin)).collect();
    let total: f64 = raw.iter().sum();
    let p = if total > 0.0 {
        raw.iter().map(|v| v / total).collect()
    } else {
        // every bump underflowed: the limit puts half the mass on each mode bin
        let mut p = vec![0.0; n_theta];
        p[mode.round() as usize % n_theta] += 0.5;
        p[twin.round() as usize % n_theta] += 0.5;
        p
    };
    RotationTarget { p, sigma_bins }
}

/// `Σ p log(p / q)` with `q = softmax(corr)`; zero-probability terms vanish.
pub fn kl_to_softmax(p: &[f64], corr: &[f64]) -> f64 {
    assert_eq!(p.len(), corr.len());
    let lse = log_sum_exp(corr);
    p.iter()
        .zip(corr)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &c)| pi * (pi.ln() - (c - lse)))
        .sum::<f64>()
        .max(0.0)
}

pub fn rotation_kl_loss(corr: &CorrVector, theta_star: f64, sigma_bins: f64) -> f64 {
    let target = bimodal_target(theta_star, corr.values.len(), sigma_bins);
    kl_to_softmax(&target.p, &corr.values)
}

/// `−log softmax(corr)` at the ground-truth shift.
pub fn translation_nll_loss(corr: &CorrMap, x_star_cells: i64, y_star_cells: i64) -> Result<f64, LossError> {
    if !corr.contains(x_star_cells, y_star_cells) {
        return Err(LossError::ShiftOutOfRange(x_star_cells, y_star_cells));
    }
    let v = corr.get(x_star_cells, y_star_cells);
    Ok((log_sum_exp(corr.values()) - v).max(0.0))
}
