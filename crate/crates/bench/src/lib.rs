//! Baselines, synthetic data and evaluation for sparse-view reconstruction.
//!
//! [`phantom`] draws test objects, [`metrics`] scores reconstructions,
//! [`fista`] is the TV-regularised iterative baseline and [`toy`] runs the
//! desk-scale training experiments. Images and sinograms travel between
//! commands as [`tgrd`] files listed in a [`manifest`].

mod error;
pub mod fista;
pub mod manifest;
pub mod metrics;
pub mod phantom;
pub mod selftest;
pub mod tgrd;
pub mod toy;

pub use error::{BenchError, Result};
