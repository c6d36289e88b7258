pub mod bench;
pub mod cli;
pub mod constraints;
pub mod error;
pub mod gp;
pub mod linalg;
pub mod manifest;
pub mod markov;
pub mod plot;
pub mod synth;

pub use error::{Error, Result};
