//! Relational-memory language modelling on a from-scratch autodiff core.
//!
//! The crate is `no_std` (it needs `alloc`); file formats and the command
//! line live in the companion `relmem` crate.

#![no_std]

extern crate alloc;

pub mod corpus;
pub mod error;
pub mod harness;
pub mod kgraph;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod retrieval;
pub mod synth;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
