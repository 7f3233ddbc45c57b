//! Particle filtering on a barrier-synchronised data-parallel engine.
//!
//! The crate is layered bottom-up: [`engine`] executes supersteps and counts
//! them, [`primitives`] and [`sortnet`] build scans, reductions, rotations and
//! sorting networks on top of it, [`resampling`] turns weights into a new
//! population, and [`filter`] runs the SIR loop on the model in [`model`].

pub mod engine;
pub mod error;
pub mod filter;
pub mod model;
pub mod primitives;
pub mod resampling;
pub mod rng;
pub mod sortnet;

pub use engine::{Engine, PassStats};
pub use error::{Error, Result};
