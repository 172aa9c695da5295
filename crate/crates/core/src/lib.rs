//! Core of the in-context video-effect editor.
//!
//! Everything in this crate is pure computation over in-memory buffers: a
//! small dense tensor type with tape-based reverse-mode differentiation, the
//! invertible latent codec, token layout (patchify, sparse conditioning,
//! position correction, rotary embeddings, attention masks), the diffusion
//! transformer, low-rank adapters, flow-matching training, the guided Euler
//! sampler, the procedural data generator and oracle metrics.
//!
//! File formats, the CLI and wall-clock profiling live in the `ivfx` crate.
//! Without the default `std` feature the crate builds as `no_std + alloc`.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod ablation;
pub mod autodiff;
pub mod codec;
pub mod error;
pub mod kernels;
pub mod layout;
pub mod lora;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod real;
pub mod rng;
pub mod sampler;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::Tensor;
