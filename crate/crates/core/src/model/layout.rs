//! Canonical parameter order and the flat parameter vector.
//!
//! Parameters are enumerated in this fixed order, which is also the order of
//! the flat vector exchanged during federation and stored in checkpoints:
//!
//! 1. `tokenizer.kernel [D×P]`, `tokenizer.bias [D]`
//! 2. `pos [N×D]` (token-major positional encoding)
//! 3. per block `i`, in block order:
//!    `blocks.i.norm1.gamma [D]`, `blocks.i.norm1.beta [D]`, then the mixer
//!    (`Id`: nothing; `TimeMlp`: `mixer.w1 [N×N]`, `mixer.b1 [N]`,
//!    `mixer.w2 [N×N]`, `mixer.b2 [N]`; `Attention`: `attn.wq [D×H·d_k]`,
//!    `attn.wk [D×H·d_k]`, `attn.wv [D×H·D]`, `attn.wo [H·D×D]`, `attn.bo [D]`),
//!    then `norm2.gamma [D]`, `norm2.beta [D]`, `mlp.w1 [D×F]`, `mlp.b1 [F]`,
//!    `mlp.w2 [F×D]`, `mlp.b2 [D]`
//! 4. `head.weight [N·D×T]`, `head.bias [T]`
//!
//! Each tensor is stored row-major. Head `h` of the attention projections
//! occupies columns `h·d_k..(h+1)·d_k` (queries, keys) or `h·D..(h+1)·D`
//! (values).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Deref, DerefMut};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{BlockKind, ForecastConfig};
use crate::gradcore::Tensor;
use crate::rng::{stream, Purpose};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// `Uniform(±1/sqrt(fan_in))`
    Uniform { fan_in: usize },
    Zeros,
    Ones,
    /// `Normal(0, 0.02)`
    Positional,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub init: Init,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered list of named parameter shapes for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
    total: usize,
}

impl ParamLayout {
    pub fn for_config(cfg: &ForecastConfig) -> Result<Self> {
        cfg.validate()?;
        let (d, p, n, t) = (cfg.d_model, cfg.patch_len, cfg.tokens(), cfg.horizon);
        let (h, dk, f) = (cfg.heads, cfg.d_k, cfg.mlp_hidden);
        let mut b = Builder::default();
        b.push("tokenizer.kernel", &[d, p], Init::Uniform { fan_in: p });
        b.push("tokenizer.bias", &[d], Init::Zeros);
        b.push("pos", &[n, d], Init::Positional);
        for (i, kind) in cfg.blocks.iter().enumerate() {
            let pre = format!("blocks.{i}");
            b.push(&format!("{pre}.norm1.gamma"), &[d], Init::Ones);
            b.push(&format!("{pre}.norm1.beta"), &[d], Init::Zeros);
            match kind {
                BlockKind::Id => {}
                BlockKind::TimeMlp => {
                    b.push(&format!("{pre}.mixer.w1"), &[n, n], Init::Uniform { fan_in: n });
                    b.push(&format!("{pre}.mixer.b1"), &[n], Init::Zeros);
                    b.push(&format!("{pre}.mixer.w2"), &[n, n], Init::Uniform { fan_in: n });
                    b.push(&format!("{pre}.mixer.b2"), &[n], Init::Zeros);
                }
                BlockKind::Attention => {
                    b.push(&format!("{pre}.attn.wq"), &[d, h * dk], Init::Uniform { fan_in: d });
                    b.push(&format!("{pre}.attn.wk"), &[d, h * dk], Init::Uniform { fan_in: d });
                    b.push(&format!("{pre}.attn.wv"), &[d, h * d], Init::Uniform { fan_in: d });
                    b.push(&format!("{pre}.attn.wo"), &[h * d, d], Init::Uniform { fan_in: h * d });
                    b.push(&format!("{pre}.attn.bo"), &[d], Init::Zeros);
                }
            }
            b.push(&format!("{pre}.norm2.gamma"), &[d], Init::Ones);
            b.push(&format!("{pre}.norm2.beta"), &[d], Init::Zeros);
            b.push(&format!("{pre}.mlp.w1"), &[d, f], Init::Uniform { fan_in: d });
            b.push(&format!("{pre}.mlp.b1"), &[f], Init::Zeros);
            b.push(&format!("{pre}.mlp.w2"), &[f, d], Init::Uniform { fan_in: f });
            b.push(&format!("{pre}.mlp.b2"), &[d], Init::Zeros);
        }
        b.push("head.weight", &[n * d, t], Init::Uniform { fan_in: n * d });
        b.push("head.bias", &[t], Init::Zeros);
        Ok(ParamLayout { specs: b.specs, total: b.offset })
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    /// Total trainable scalars.
    pub fn total(&self) -> usize {
        self.total
    }

    pub fn get(&self, name: &str) -> Option<&ParamSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    /// Maps a flat index to `(parameter name, index inside that tensor)`.
    pub fn locate(&self, index: usize) -> Option<(&str, usize)> {
        let pos = self.specs.partition_point(|s| s.offset + s.len() <= index);
        let spec = self.specs.get(pos)?;
        Some((spec.name.as_str(), index - spec.offset))
    }

    /// Fresh parameters drawn from each entry's initializer.
    pub fn init(&self, seed: u64) -> ParamVector {
        let mut rng = stream(seed, 0, Purpose::Init, 0);
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let mut values = Vec::with_capacity(self.total);
        for spec in &self.specs {
            for _ in 0..spec.len() {
                values.push(match spec.init {
                    Init::Uniform { fan_in } => {
                        let bound = 1.0 / libm::sqrt(fan_in as f64);
                        rng.random_range(-bound..bound)
                    }
                    Init::Zeros => 0.0,
                    Init::Ones => 1.0,
                    Init::Positional => normal.sample(&mut rng),
                });
            }
        }
        ParamVector(values)
    }
}

#[derive(Default)]
struct Builder {
    specs: Vec<ParamSpec>,
    offset: usize,
}

impl Builder {
    fn push(&mut self, name: &str, shape: &[usize], init: Init) {
        let spec = ParamSpec { name: name.into(), shape: shape.to_vec(), offset: self.offset, init };
        self.offset += spec.len();
        self.specs.push(spec);
    }
}

/// Exact number of trainable scalars for `cfg`.
pub fn param_count(cfg: &ForecastConfig) -> Result<usize> {
    Ok(ParamLayout::for_config(cfg)?.total())
}

/// All trainable parameters flattened in canonical order.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

/// Structured, named view of a parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedParams {
    pub tensors: Vec<(String, Tensor)>,
}

impl NamedParams {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

/// Concatenates named tensors in canonical order.
pub fn flatten(layout: &ParamLayout, params: &NamedParams) -> Result<ParamVector> {
    if params.tensors.len() != layout.specs.len() {
        return Err(Error::Length { expected: layout.specs.len(), actual: params.tensors.len() });
    }
    let mut out = Vec::with_capacity(layout.total);
    for (spec, (name, t)) in layout.specs.iter().zip(&params.tensors) {
        if *name != spec.name || t.shape() != spec.shape.as_slice() {
            return Err(Error::shape(
                "flatten",
                format!("expected {} {:?}, got {name} {:?}", spec.name, spec.shape, t.shape()),
            ));
        }
        out.extend_from_slice(t.data());
    }
    Ok(ParamVector(out))
}

/// Splits a flat vector back into named tensors.
pub fn unflatten(layout: &ParamLayout, flat: &[f64]) -> Result<NamedParams> {
    if flat.len() != layout.total {
        return Err(Error::Length { expected: layout.total, actual: flat.len() });
    }
    let tensors = layout
        .specs
        .iter()
        .map(|s| Ok((s.name.clone(), Tensor::new(&s.shape, flat[s.range()].to_vec())?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(NamedParams { tensors })
}
