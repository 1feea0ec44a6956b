use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Token mixer used by one MetaFormer block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BlockKind {
    /// IDFormer: no cross-token mixing.
    Id,
    /// MLPFormer: two affine maps along the token axis.
    TimeMlp,
    /// Multi-head self-attention.
    Attention,
}

/// Shape hyperparameters of the forecaster.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ForecastConfig {
    /// Look-back length `L`.
    pub lookback: usize,
    /// Prediction horizon `T`.
    pub horizon: usize,
    /// Channel count `M`; channels share weights and run independently.
    pub channels: usize,
    /// Patch (kernel) length `P`.
    pub patch_len: usize,
    /// Patch stride `S`.
    pub stride: usize,
    /// Embedding width `D`.
    pub d_model: usize,
    /// Attention heads `H`.
    pub heads: usize,
    /// Per-head query/key width `d_k`.
    pub d_k: usize,
    /// Hidden width of the channel MLP.
    pub mlp_hidden: usize,
    pub blocks: Vec<BlockKind>,
}

impl ForecastConfig {
    /// Default desk configuration: two IDFormer blocks then one attention block.
    pub fn desk(horizon: usize) -> Self {
        ForecastConfig {
            lookback: 128,
            horizon,
            channels: 1,
            patch_len: 16,
            stride: 8,
            d_model: 64,
            heads: 4,
            d_k: 16,
            mlp_hidden: 128,
            blocks: vec![BlockKind::Id, BlockKind::Id, BlockKind::Attention],
        }
    }

    /// Same shapes with every block replaced by attention.
    pub fn all_attention_twin(&self) -> Self {
        ForecastConfig { blocks: vec![BlockKind::Attention; self.blocks.len()], ..self.clone() }
    }

    /// Number of tokens, `floor(L / S)`.
    pub fn tokens(&self) -> usize {
        self.lookback / self.stride
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("channels", self.channels),
            ("patch_len", self.patch_len),
            ("stride", self.stride),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("d_k", self.d_k),
            ("mlp_hidden", self.mlp_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.lookback < self.patch_len {
            return Err(Error::Config(format!(
                "lookback {} is shorter than patch_len {}",
                self.lookback, self.patch_len
            )));
        }
        if self.lookback < 2 {
            return Err(Error::Config("lookback must be at least 2".into()));
        }
        if self.tokens() == 0 {
            return Err(Error::Config("stride exceeds lookback".into()));
        }
        if self.heads * self.d_k != self.d_model {
            return Err(Error::Config(format!(
                "heads * d_k = {} must equal d_model = {}",
                self.heads * self.d_k,
                self.d_model
            )));
        }
        Ok(())
    }
}
