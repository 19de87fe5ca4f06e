//! Face-gated GAN augmentation for person re-identification, with a
//! CondenseNet-style classifier and the evaluation protocol around it.

pub mod condense;
pub mod data;
pub mod error;
pub mod eval;
pub mod gan;
pub mod harness;
pub mod nn;
pub mod seed;
pub mod semfilter;

pub use error::{Error, Result};
