//! Desk-scale laboratory for generative neural-operator surrogates.
//!
//! The crate couples stochastic-PDE data generators (Burgers, Darcy,
//! Kuramoto-Sivashinsky, Kolmogorov flow), a deterministic FNO backbone, and
//! a diffusion last layer that models the conditional output law in the
//! coefficient space of an operator encoder. Karhunen-Loeve oracles and
//! distributional metrics verify each stage.

pub mod autodiff;
pub mod config;
pub mod darcy;
pub mod dll;
pub mod dataset;
pub mod baseline;
pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod fft;
pub mod grid;
pub mod kl;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod rollout;
pub mod selfcheck;
pub mod solvers;
pub mod tensor;
pub mod train_util;

pub use error::{CoreError, Result};
pub use tensor::Tensor;
