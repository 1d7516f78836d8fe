//! Longitudinal self-supervised representation learning.
//!
//! An autoencoder whose within-subject representation changes are pulled
//! onto a shared learned unit direction `tau` by a cosine term, plus the
//! synthetic phantom generator, the brain-age analysis, the disentanglement
//! verifier and the downstream classification protocol built around it.
//!
//! The crate is `no_std` and only needs `alloc`; file formats, the command
//! line and plotting live in the `lssl` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod downstream;
pub mod error;
pub mod math;
pub mod model;
pub mod nn;
pub mod objective;
pub mod optim;
pub mod rng;
pub mod stats;
pub mod synthgen;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use model::{ArchConfig, ModelParams, Representation};
pub use synthgen::{Cohort, DatasetManifest, FactorVector, Group, ImageVolume, SubjectTrajectory};
