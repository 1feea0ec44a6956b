use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::DistanceMatrix;
use crate::rng::{stream, Purpose};
use crate::{Error, Result};

/// Instances with at most this many candidate medoid sets are also solved
/// by enumeration, so small problems always get the optimum.
const EXACT_LIMIT: u64 = 5_000;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Clustering {
    /// Cluster index of every client.
    pub assignment: Vec<usize>,
    /// Client id of each cluster's medoid, ascending.
    pub medoids: Vec<usize>,
    /// Sum of member-to-medoid distances.
    pub cost: f64,
    /// Cost after initialization and after every improving step.
    pub cost_trace: Vec<f64>,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.medoids.len()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == cluster).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k()];
        for &c in &self.assignment {
            s[c] += 1;
        }
        s
    }
}

/// Total distance from each point to its nearest medoid.
pub fn assignment_cost(d: &DistanceMatrix, medoids: &[usize]) -> f64 {
    (0..d.len()).map(|i| medoids.iter().map(|&m| d.get(i, m)).fold(f64::INFINITY, f64::min)).sum()
}

fn assign(d: &DistanceMatrix, medoids: &[usize]) -> Vec<usize> {
    (0..d.len())
        .map(|i| {
            if let Some(own) = medoids.iter().position(|&m| m == i) {
                return own;
            }
            let mut best = 0;
            for (c, &m) in medoids.iter().enumerate() {
                if d.get(i, m) < d.get(i, medoids[best]) {
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn kpp_init<R: Rng>(d: &DistanceMatrix, k: usize, rng: &mut R) -> Vec<usize> {
    let n = d.len();
    let mut medoids = vec![rng.random_range(0..n)];
    while medoids.len() < k {
        let weights: Vec<f64> = (0..n)
            .map(|i| {
                if medoids.contains(&i) {
                    0.0
                } else {
                    medoids.iter().map(|&m| d.get(i, m)).fold(f64::INFINITY, f64::min)
                }
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut chosen = None;
            for (i, &w) in weights.iter().enumerate() {
                if w > 0.0 {
                    chosen = Some(i);
                    if u < w {
                        break;
                    }
                    u -= w;
                }
            }
            chosen.expect("positive total weight")
        } else {
            let free: Vec<usize> = (0..n).filter(|i| !medoids.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        medoids.push(pick);
    }
    medoids
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = match acc.checked_mul(n - i) {
            Some(v) => v / (i + 1),
            None => return u64::MAX,
        };
    }
    acc
}

fn best_by_enumeration(d: &DistanceMatrix, k: usize) -> (Vec<usize>, f64) {
    let n = d.len();
    let mut idx: Vec<usize> = (0..k).collect();
    let mut best = (idx.clone(), assignment_cost(d, &idx));
    loop {
        // Next k-combination in lexicographic order.
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return best;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
        let c = assignment_cost(d, &idx);
        if c < best.1 {
            best = (idx.clone(), c);
        }
    }
}

/// k-medoids over a precomputed distance matrix.
///
/// Medoids start from distance-proportional seeding, then assignment and
/// medoid recomputation alternate until stable, then single medoid swaps are
/// applied while any lowers the cost.
pub fn cluster_clients(d: &DistanceMatrix, k: usize, seed: u64) -> Result<Clustering> {
    let n = d.len();
    if k == 0 || k > n {
        return Err(Error::Config(format!("k = {k} must be between 1 and the number of clients ({n})")));
    }
    let mut rng = stream(seed, 0, Purpose::Clustering, 0);
    let mut medoids = kpp_init(d, k, &mut rng);
    let mut cost = assignment_cost(d, &medoids);
    let mut trace = vec![cost];

    loop {
        let assignment = assign(d, &medoids);
        let mut next = medoids.clone();
        for (c, slot) in next.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| assignment[i] == c).collect();
            let within = |cand: usize| members.iter().map(|&i| d.get(i, cand)).sum::<f64>();
            let mut best = *slot;
            let mut best_cost = within(best);
            for &cand in &members {
                let w = within(cand);
                if w < best_cost {
                    best = cand;
                    best_cost = w;
                }
            }
            *slot = best;
        }
        let c = assignment_cost(d, &next);
        if c < cost {
            medoids = next;
            cost = c;
            trace.push(cost);
        } else {
            break;
        }
    }

    loop {
        let mut best_swap = None;
        let mut best_cost = cost;
        for slot in 0..k {
            for cand in (0..n).filter(|i| !medoids.contains(i)) {
                let mut trial = medoids.clone();
                trial[slot] = cand;
                let c = assignment_cost(d, &trial);
                if c < best_cost {
                    best_cost = c;
                    best_swap = Some(trial);
                }
            }
        }
        match best_swap {
            Some(m) => {
                medoids = m;
                cost = best_cost;
                trace.push(cost);
            }
            None => break,
        }
    }

    if binomial(n as u64, k as u64) <= EXACT_LIMIT {
        let (m, c) = best_by_enumeration(d, k);
        if c < cost {
            medoids = m;
            cost = c;
            trace.push(cost);
        }
    }

    medoids.sort_unstable();
    let assignment = assign(d, &medoids);
    Ok(Clustering { assignment, medoids, cost, cost_trace: trace })
}
