#![allow(dead_code)]

use psgf_core::gradcore::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Relative error with a small absolute floor so that exact zeros compare sanely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs().max(b.abs()) + 1e-6)
}

/// Central-difference oracle. `build` must construct a scalar from the
/// supplied parameter leaves; it is re-run on a fresh tape for every probe.
pub fn finite_difference(
    inputs: &[Tensor],
    h: f64,
    build: &dyn Fn(&mut Tape, &[Var]) -> Var,
) -> Vec<Vec<f64>> {
    let eval = |vals: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.param(t.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).item().unwrap()
    };
    let mut out = Vec::new();
    for (i, t) in inputs.iter().enumerate() {
        let mut grads = Vec::with_capacity(t.len());
        for j in 0..t.len() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            let mut d = plus[i].data().to_vec();
            d[j] += h;
            plus[i] = Tensor::new(t.shape(), d).unwrap();
            let mut d = minus[i].data().to_vec();
            d[j] -= h;
            minus[i] = Tensor::new(t.shape(), d).unwrap();
            grads.push((eval(&plus) - eval(&minus)) / (2.0 * h));
        }
        out.push(grads);
    }
    out
}

/// Analytic gradients for the same construction.
pub fn analytic(inputs: &[Tensor], build: &dyn Fn(&mut Tape, &[Var]) -> Var) -> Vec<Vec<f64>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();
    vars.iter().map(|v| grads.wrt(*v).to_vec()).collect()
}

/// Largest relative error between the two routes.
pub fn max_gradient_error(inputs: &[Tensor], h: f64, build: &dyn Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let a = analytic(inputs, build);
    let n = finite_difference(inputs, h, build);
    a.iter()
        .flatten()
        .zip(n.iter().flatten())
        .map(|(x, y)| rel_err(*x, *y))
        .fold(0.0, f64::max)
}
