//! Graph-gated fully connected forecasting engine.
//!
//! Everything numeric lives here: a small dense-tensor engine with
//! reverse-mode differentiation ([`tape`]), the gated graph forecasting
//! model ([`model`]), the optimizer and evaluation metrics
//! ([`optim`], [`metrics`]), panel windowing ([`data`]) and a synthetic
//! panel generator with a planted coupling graph ([`synth`]).
//!
//! The crate is `no_std` + `alloc`; file formats, checkpoints and the CLI
//! live in the companion `fcgaga` crate.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod synth;
pub mod tape;
pub mod tensor;

pub use error::CoreError;
pub use tape::{FlopCounter, Tape, Var};
pub use tensor::Tensor;
