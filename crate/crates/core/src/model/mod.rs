//! The patch-token forecaster.
//!
//! Per channel: RevIN normalization, strided-convolution tokenization,
//! additive positional encoding, a stack of MetaFormer blocks, a flattening
//! affine head and RevIN denormalization. The canonical block list is two
//! identity-mixer blocks followed by one attention block.

mod config;
mod forward;
mod layout;
mod revin;

pub use config::{BlockKind, ForecastConfig};
pub use forward::{
    add_positional, attention, detokenize, metaformer_block, mse_loss, tokenize, AttentionVars, BlockVars,
    Forecaster, MixerVars, ModelVars,
};
pub use layout::{flatten, param_count, unflatten, Init, NamedParams, ParamLayout, ParamSpec, ParamVector};
pub use revin::{revin_denormalize, revin_normalize, RevinStats, REVIN_EPS};
