//! Desk-scale tensor math: dense f64 tensors, a reverse-mode gradient tape,
//! the neural layers the encoders and fusion heads are built from, Adam, and
//! a finite-difference gradient-check harness.
//!
//! Design constraints the rest of the workspace relies on:
//! - all arithmetic is f64, so gradient checks resolve to ~1e-10;
//! - every stochastic choice draws from an explicit seeded [`rng::Rng`];
//! - identical inputs and seeds give bitwise-identical outputs and gradients;
//! - a [`tape::GradTape`] is single-shot and rejects second-order use.

pub mod error;
pub mod gradcheck;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod param;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use error::{Result, TensorError};
pub use param::Parameter;
pub use rng::Rng;
pub use tape::{Ctx, GradTape, OpKind};
pub use tensor::{BoolTensor, IntTensor, Tensor};
