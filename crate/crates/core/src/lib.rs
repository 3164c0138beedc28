//! Dual-domain CT metal artifact reduction.
//!
//! The crate bundles a matched parallel-beam projector pair, filtered
//! back-projection, a synthetic metal-artifact simulator, the LI and NMAR
//! baselines, an alternating proximal-gradient solver over a normalized
//! sinogram and the image, and the metrics and file formats used to score
//! and exchange results.

pub mod classical;
pub mod cli;
pub mod config;
pub mod error;
pub mod fbp;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod projector;
pub mod prox;
pub mod simulator;
pub mod solver;
pub mod types;

pub use error::{Error, Result};
pub use projector::Projector;
pub use types::{validate_pair, Geometry, Image, Sinogram};
