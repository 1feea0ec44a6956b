use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Dynamic time warping distance with local cost `|a_i - b_j|`, steps
/// match/insert/delete and both endpoints anchored. O(|a|·|b|) time,
/// O(|b|) memory.
pub fn dtw_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("dtw series"));
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &x in a {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j - 1].min(prev[j]).min(cur[j - 1]);
            cur[j] = libm::fabs(x - b[j - 1]) + best;
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

/// `(x - mean) / std`; a constant series maps to zeros.
pub fn z_normalize(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = libm::sqrt(var);
    if std == 0.0 {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - mean) / std).collect()
}

/// Symmetric `K×K` matrix of pairwise distances with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    /// Validates symmetry, zero diagonal and non-negativity.
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Length { expected: n * n, actual: data.len() });
        }
        for i in 0..n {
            if data[i * n + i] != 0.0 {
                return Err(Error::Config(format!("distance matrix diagonal entry {i} is non-zero")));
            }
            for j in 0..n {
                let (a, b) = (data[i * n + j], data[j * n + i]);
                if !(a >= 0.0) || libm::fabs(a - b) > 1e-12 {
                    return Err(Error::Config(format!("distance matrix invalid at ({i}, {j})")));
                }
            }
        }
        Ok(DistanceMatrix { n, data })
    }

    /// Pairwise DTW, optionally z-normalizing each series first.
    pub fn dtw(series: &[&[f64]], normalize: bool) -> Result<Self> {
        let prepared: Vec<Vec<f64>> =
            series.iter().map(|s| if normalize { z_normalize(s) } else { s.to_vec() }).collect();
        let n = prepared.len();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d = dtw_distance(&prepared[i], &prepared[j])?;
                data[i * n + j] = d;
                data[j * n + i] = d;
            }
        }
        Ok(DistanceMatrix { n, data })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}
