pub mod cli;
pub mod config;
pub mod error;
pub mod tensor;

pub use error::{Error, Result};
pub mod model;
pub mod contrast;
pub mod compress;
pub mod synthgen;
pub mod dsp;
pub mod corpus;
pub mod trainkit;
pub mod verify;
