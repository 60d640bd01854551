//! Link prediction over knowledge graphs with a two-level Transformer that
//! reads each query entity together with its sampled graph neighborhood.
//!
//! Modules, bottom up: [`kg`] loads triples and answers graph queries,
//! [`batch`] turns triples into perturbed, padded training batches,
//! [`model`] holds the encoder and its losses, [`train`] runs optimization
//! with early stopping and [`eval`] computes filtered ranking metrics and
//! breakdowns. [`config`] resolves run configurations from presets and
//! overrides, [`synthetic`] writes small graphs with known structure.

pub mod batch;
pub mod config;
mod error;
pub mod eval;
pub mod kg;
pub mod model;
pub mod registry;
pub mod synthetic;
pub mod train;

pub use error::{CoreError, Result};
