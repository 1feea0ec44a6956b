//! Core numerics for federated time-series forecasting.
//!
//! Everything in this crate is pure computation over in-memory values and
//! builds without `std` (an allocator is required). File formats, the
//! command line and experiment orchestration live in `psgf-sim`.
//!
//! Module map:
//!
//! * [`gradcore`] dense tensors, a reverse-mode tape, Adam and learning-rate schedules.
//! * [`model`] the patch-token forecaster (RevIN, tokenizer, MetaFormer blocks, head).
//! * [`federation`] Online-Fed, PSO-Fed and PSGF-Fed rounds with exact scalar accounting.
//! * [`clustering`] DTW distances and k-medoids grouping of clients.
//! * [`data`] daily series, chronological windowing and synthetic datasets.
//! * [`train`] centralized training with early stopping.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod clustering;
pub mod data;
mod error;
pub mod federation;
pub mod gradcore;
pub mod model;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
