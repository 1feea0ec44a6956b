use alloc::format;
use alloc::vec::Vec;

use rand::seq::index::sample;

use crate::rng::{stream, Purpose};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Policy {
    Online,
    Pso,
    Psgf,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::Online => "online",
            Policy::Pso => "pso",
            Policy::Psgf => "psgf",
        }
    }
}

/// Fractions of clients selected, coordinates shared with selected clients,
/// and coordinates forwarded to unselected clients.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FedRatios {
    pub select: f64,
    pub share: f64,
    pub forward: f64,
}

impl FedRatios {
    /// `select` and `share` must lie in `(0, 1]`, `forward` in `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64, allow_zero: bool| {
            let ok = v.is_finite() && v <= 1.0 && if allow_zero { v >= 0.0 } else { v > 0.0 };
            if ok {
                Ok(())
            } else {
                let range = if allow_zero { "[0, 1]" } else { "(0, 1]" };
                Err(Error::Config(format!("{name}_ratio = {v} is outside {range}")))
            }
        };
        unit("select", self.select, false)?;
        unit("share", self.share, false)?;
        unit("forward", self.forward, true)
    }

    /// `(C, M_share, N_fwd)` for `clients` clients and `dim` coordinates.
    pub fn counts(&self, policy: Policy, clients: usize, dim: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        if clients == 0 || dim == 0 {
            return Err(Error::Empty("clients or parameters"));
        }
        let c = (libm::round(self.select * clients as f64) as usize).clamp(1, clients);
        let (m, f) = match policy {
            Policy::Online => (dim, 0),
            Policy::Pso => (libm::round(self.share * dim as f64) as usize, 0),
            Policy::Psgf => (
                libm::round(self.share * dim as f64) as usize,
                libm::round(self.forward * dim as f64) as usize,
            ),
        };
        if m == 0 {
            return Err(Error::Config(format!("share_ratio {} selects no coordinates of {dim}", self.share)));
        }
        Ok((c, m.min(dim), f.min(dim)))
    }
}

/// Sorted, duplicate-free coordinate indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    indices: Vec<usize>,
}

pub type SelectionMask = Mask;
pub type ForwardMask = Mask;

impl Mask {
    pub fn full(dim: usize) -> Self {
        Mask { indices: (0..dim).collect() }
    }

    /// Builds a mask from arbitrary indices, sorting them and rejecting
    /// duplicates or out-of-range entries.
    pub fn from_indices(mut indices: Vec<usize>, dim: usize) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("mask indices repeat".into()));
        }
        if indices.last().is_some_and(|&i| i >= dim) {
            return Err(Error::Config(format!("mask index out of range for dimension {dim}")));
        }
        Ok(Mask { indices })
    }

    /// Uniform random subset of size `size` out of `dim`.
    pub fn random<R: rand::Rng + ?Sized>(rng: &mut R, dim: usize, size: usize) -> Result<Self> {
        if size > dim {
            return Err(Error::Config(format!("cannot pick {size} of {dim} coordinates")));
        }
        let mut indices = sample(rng, dim, size).into_vec();
        indices.sort_unstable();
        Ok(Mask { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }
}

/// All random choices of one round.
///
/// `exchange[i]` and `report[i]` are set for selected clients (the masks
/// used for download before local training and for upload after it);
/// `forward[i]` is set for unselected clients under PSGF.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundPlan {
    pub round: u64,
    pub policy: Policy,
    pub dim: usize,
    pub selected: Vec<usize>,
    pub exchange: Vec<Option<SelectionMask>>,
    pub report: Vec<Option<SelectionMask>>,
    pub forward: Vec<Option<ForwardMask>>,
}

impl RoundPlan {
    pub fn is_selected(&self, client: usize) -> bool {
        self.exchange.get(client).is_some_and(Option::is_some)
    }

    pub fn num_clients(&self) -> usize {
        self.exchange.len()
    }
}

/// Draws round `round` for `clients` clients over `dim` coordinates.
///
/// Each draw uses its own stream keyed by `(seed, round, purpose, client)`,
/// so e.g. the forward masks of PSGF never shift the selection or the
/// exchange masks relative to PSO under the same seed.
pub fn draw_round_plan(
    seed: u64,
    round: u64,
    policy: Policy,
    ratios: &FedRatios,
    clients: usize,
    dim: usize,
) -> Result<RoundPlan> {
    let (c, m, f) = ratios.counts(policy, clients, dim)?;
    let mut rng = stream(seed, round, Purpose::ClientSelection, 0);
    let mut selected = sample(&mut rng, clients, c).into_vec();
    selected.sort_unstable();

    let mut exchange = alloc::vec![None; clients];
    let mut report = alloc::vec![None; clients];
    let mut forward = alloc::vec![None; clients];
    for &i in &selected {
        let (ex, rep) = if m == dim {
            (Mask::full(dim), Mask::full(dim))
        } else {
            (
                Mask::random(&mut stream(seed, round, Purpose::ExchangeMask, i as u64), dim, m)?,
                Mask::random(&mut stream(seed, round, Purpose::ReportMask, i as u64), dim, m)?,
            )
        };
        exchange[i] = Some(ex);
        report[i] = Some(rep);
    }
    if policy == Policy::Psgf {
        for (i, slot) in forward.iter_mut().enumerate() {
            if exchange[i].is_none() {
                *slot = Some(Mask::random(&mut stream(seed, round, Purpose::ForwardMask, i as u64), dim, f)?);
            }
        }
    }
    Ok(RoundPlan { round, policy, dim, selected, exchange, report, forward })
}
