//! Filtered contractive deep belief networks for kinship verification, with
//! kin-score fusion for face verification and signal-detection metrics.

pub mod descriptors;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod io;
pub mod kvrl;
pub mod numeric;
pub mod benchmark;
pub mod cli;
pub mod dbn;
pub mod mlp;
pub mod rbm;
pub mod synth;

pub use error::{Error, Result};
