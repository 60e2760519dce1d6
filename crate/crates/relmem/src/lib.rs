//! File formats, checkpoints, manifests and the command-line driver for
//! [`relmem_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod formats;
pub mod manifest;

pub use config::Settings;
