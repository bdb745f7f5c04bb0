//! Knowledge-conflict detection and reward-weighted curation for
//! multiple-choice QA fine-tuning data.
//!
//! The pipeline:
//!
//! 1. [`diversify`] renders each training question under several option
//!    orders as few-shot probe prompts.
//! 2. [`probe`] asks a model backend (HTTP endpoint, simulator or mock) for
//!    sampled answers and caches them.
//! 3. [`scoring`] turns answers into conflict scores, splits the data into
//!    conflict-ordered subsets and reports the score distribution.
//! 4. [`curation`] assigns per-sample rewards and builds baseline training
//!    sets.
//! 5. [`toytrain`] is a small softmax classifier trained with the
//!    reward-weighted objective, with a synthetic-conflict experiment.
//!
//! [`cli`] wires the stages into the `kaft` binary.

pub mod cli;
pub mod curation;
pub mod dataset;
pub mod diversify;
pub mod error;
pub mod pool;
pub mod probe;
pub mod scoring;
pub mod seed;
pub mod synth;
pub mod toytrain;

pub use error::{Error, Result};
