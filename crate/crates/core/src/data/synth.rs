use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Normal};

use super::DailySeries;
use crate::rng::{stream, Purpose};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum SynthProfile {
    /// Clean series with strong weekly seasonality.
    Nn5Like,
    /// Noisier series with zeroed dropout days.
    EvLike,
}

/// Ingredients of a synthetic client series:
/// `level + amplitude·sin(2π·t/period + phase) + slope·t + noise`,
/// with each day independently zeroed with probability `dropout`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SynthComponents {
    /// Per-client level drawn uniformly from `[level.0, level.1]`.
    pub level: (f64, f64),
    /// Per-client amplitude drawn uniformly from `[amplitude.0, amplitude.1]`.
    pub amplitude: (f64, f64),
    pub period: f64,
    /// Per-client slope per day drawn uniformly from `[-trend, trend]`.
    pub trend: f64,
    pub noise_std: f64,
    pub dropout: f64,
    /// When false every client uses phase 0.
    pub random_phase: bool,
}

impl SynthComponents {
    pub fn profile(p: SynthProfile) -> Self {
        match p {
            SynthProfile::Nn5Like => SynthComponents {
                level: (15.0, 25.0),
                amplitude: (4.0, 8.0),
                period: 7.0,
                trend: 0.01,
                noise_std: 1.0,
                dropout: 0.0,
                random_phase: true,
            },
            SynthProfile::EvLike => SynthComponents {
                level: (20.0, 60.0),
                amplitude: (5.0, 15.0),
                period: 7.0,
                trend: 0.02,
                noise_std: 6.0,
                dropout: 0.1,
                random_phase: true,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = self.level.0 <= self.level.1 && self.amplitude.0 <= self.amplitude.1;
        let ok = ordered
            && self.period > 0.0
            && self.trend >= 0.0
            && self.noise_std >= 0.0
            && (0.0..=1.0).contains(&self.dropout);
        if !ok {
            return Err(Error::Config(format!("invalid synthetic components {self:?}")));
        }
        Ok(())
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Generates `num_clients` series of `days` values. Client `i` draws only
/// from its own stream, so adding clients never changes existing ones.
pub fn synth_dataset(num_clients: usize, days: usize, seed: u64, c: &SynthComponents) -> Result<Vec<DailySeries>> {
    c.validate()?;
    if num_clients == 0 || days == 0 {
        return Err(Error::Empty("synthetic dataset"));
    }
    let noise = Normal::new(0.0, c.noise_std).map_err(|e| Error::Config(format!("noise: {e}")))?;
    let drop = Bernoulli::new(c.dropout).map_err(|e| Error::Config(format!("dropout: {e}")))?;
    let mut out = Vec::with_capacity(num_clients);
    for i in 0..num_clients {
        let mut rng = stream(seed, 0, Purpose::Synthesis, i as u64);
        let level = uniform(&mut rng, c.level);
        let amp = uniform(&mut rng, c.amplitude);
        let phase = if c.random_phase { rng.random_range(0.0..2.0 * PI) } else { 0.0 };
        let slope = if c.trend > 0.0 { rng.random_range(-c.trend..c.trend) } else { 0.0 };
        let mut values = Vec::with_capacity(days);
        let mut missing = Vec::with_capacity(days);
        for t in 0..days {
            let tf = t as f64;
            let mut v = level + amp * libm::sin(2.0 * PI * tf / c.period + phase) + slope * tf;
            if c.noise_std > 0.0 {
                v += noise.sample(&mut rng);
            }
            let dropped = c.dropout > 0.0 && drop.sample(&mut rng);
            values.push(if dropped { 0.0 } else { v });
            missing.push(dropped);
        }
        out.push(DailySeries { client_id: format!("client{i:03}"), start_day: 0, values, missing });
    }
    Ok(out)
}
