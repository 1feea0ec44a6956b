//! Reversible instance normalization without learnable affine terms.

use alloc::vec::Vec;

pub const REVIN_EPS: f64 = 1e-8;

/// Statistics removed from one input instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RevinStats {
    pub mean: f64,
    /// `sqrt(var + ε)`, so always at least `sqrt(ε)`.
    pub std: f64,
}

pub fn revin_normalize(x: &[f64]) -> (Vec<f64>, RevinStats) {
    let n = x.len().max(1) as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = libm::sqrt(var + REVIN_EPS);
    let normed = x.iter().map(|v| (v - mean) / std).collect();
    (normed, RevinStats { mean, std })
}

pub fn revin_denormalize(y: &[f64], stats: RevinStats) -> Vec<f64> {
    y.iter().map(|v| v * stats.std + stats.mean).collect()
}
