//! Train movement and demand-supply-gap inference from passive wifi
//! observation traces.
//!
//! The crate is organized as a pipeline:
//!
//! - [`trace`]: observation records, journey vectorization, trace files
//! - [`sim`]: a discrete-event line simulator producing labeled synthetic traces
//! - [`similarity`]: journey similarity kernels and sparse similarity graphs
//! - [`clustering`]: the per-station DBSCAN baseline and robust spectral
//!   clustering of journeys into train trips, plus timetable extraction
//! - [`dsg`]: scaling factors, demand-supply-gap features and the
//!   hierarchical logistic model
//! - [`eval`]: metrics, experiment drivers and the mini-batch streaming mode

// `!(x >= 0.0)` is how validation rejects NaN along with negatives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod dsg;
pub mod error;
pub mod eval;
pub mod sim;
pub mod similarity;
pub mod trace;

pub use error::{Error, Result};
