//! Experiment harness for `scatternet`.
//!
//! Each experiment is a pure function of an [`ExperimentConfig`] (id, seed,
//! output directory, numeric parameters): it writes CSV/PGM/checkpoint
//! artifacts under `<out>/<id>/` and returns a list of [`Check`]s. The
//! `verify` entry point additionally runs every module invariant and
//! cross-checks that each declared invariant has a check.

pub mod checks;
pub mod config;
pub mod error;
pub mod experiments;
pub mod gratings;
pub mod verify;

pub use checks::Check;
pub use config::{ExperimentConfig, ExperimentId};
pub use error::{HarnessError, Result};
pub use experiments::ExperimentOutcome;
