//! Voice-command recognition for drone control: waveform features,
//! augmentation, synthetic datasets, a small neural-network stack, the three
//! recognition pipelines and the evaluation bench.

pub mod audio;
pub mod augment;
pub mod config;
pub mod dataset;
pub mod engines;
pub mod error;
pub mod eval;
pub mod label;
pub mod neuro;
pub mod pipelines;
pub mod seed;
pub mod workflow;

pub use error::{Error, Result};
pub use label::{CommandLabel, DecisionLabel};
